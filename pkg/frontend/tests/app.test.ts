import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { LabelingApi } from "../src/api.js";
import { GradingApp } from "../src/app.js";

type Handler = (url: string, init?: RequestInit) => { status: number; body: unknown };

function itemPayload(id: string, score = 0) {
  const samples = Array.from({ length: 40 }, (_, i) =>
    [i * 0.2, 0.5 + 0.002 * i, 0.35 - 0.001 * i, 0.58, 0.31]);
  return {
    id, score, features: [0.1, 0, 0.2, 0.01, 0.05, 0, 0.3, 0.02],
    window: 7.8, r1: [0.5, 0.58], r2: [0.35, 0.31], samples,
  };
}

/** In-memory stand-in for the service with the real queue semantics. */
class FakeService {
  items: { id: string; score: number; labeled: boolean }[] = [];
  labels: { id: string; grade: number }[] = [];
  retrainEvery = 3;
  retrains = 0;

  handler: Handler = (url, init) => {
    if (url.endsWith("/queue/next")) {
      const pending = this.items.filter((it) => !it.labeled)
        .sort((a, b) => b.score - a.score);
      if (pending.length === 0) return { status: 200, body: { empty: true } };
      return { status: 200, body: { empty: false, item: itemPayload(pending[0]!.id, pending[0]!.score) } };
    }
    if (url.endsWith("/labels")) {
      const req = JSON.parse(String(init?.body)) as { id: string; grade: number };
      const item = this.items.find((it) => it.id === req.id);
      if (!item) return { status: 404, body: { detail: "unknown id" } };
      if (item.labeled) return { status: 409, body: { detail: "already labeled" } };
      if (req.grade < 0 || req.grade > 10) {
        return { status: 422, body: { detail: "grade outside [0, 10]" } };
      }
      item.labeled = true;
      this.labels.push(req);
      if (this.labels.length % this.retrainEvery === 0) this.retrains += 1;
      return { status: 200, body: { accepted: true } };
    }
    if (url.endsWith("/progress")) {
      return {
        status: 200,
        body: {
          labeled: this.labels.length,
          pending: this.items.filter((it) => !it.labeled).length,
          retrain_count: this.retrains,
        },
      };
    }
    return { status: 404, body: { detail: "no route" } };
  };
}

let service: FakeService;
let app: GradingApp;
let root: HTMLElement;

beforeEach(() => {
  service = new FakeService();
  service.items = [
    { id: "traj-a", score: 0.2, labeled: false },
    { id: "traj-b", score: 0.9, labeled: false },
    { id: "traj-c", score: 0.5, labeled: false },
  ];
  vi.stubGlobal("fetch", vi.fn(async (url: string, init?: RequestInit) => {
    const { status, body } = service.handler(String(url), init);
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  }));
  root = document.createElement("div");
  document.body.appendChild(root);
  app = new GradingApp(root, new LabelingApi(""), { progressPollMs: 0 });
});

afterEach(() => {
  app.stop();
  root.remove();
  vi.unstubAllGlobals();
});

describe("fetch_and_render_next", () => {
  it("renders the service's highest-variance item with its charts", async () => {
    await app.start();
    expect(app.displayedId).toBe("traj-b");
    expect(root.querySelectorAll("svg.trajectory-chart").length).toBe(2);
    expect(root.querySelector(".meta")!.textContent).toContain("traj-b");
    expect(root.querySelector(".progress")!.textContent).toContain("0 / 3");
  });

  it("renders one chart point per payload sample", async () => {
    await app.start();
    const svg = root.querySelector("svg.trajectory-chart") as SVGSVGElement;
    expect(svg.dataset.sampleCount).toBe("40");
  });

  it("shows the completion screen on an empty queue", async () => {
    service.items.forEach((it) => { it.labeled = true; });
    await app.start();
    expect(app.displayedId).toBeNull();
    expect((root.querySelector(".done") as HTMLElement).hidden).toBe(false);
  });

  it("shows a retry banner when the service is unreachable", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => { throw new TypeError("net down"); }));
    await app.fetchNext();
    expect(root.querySelector(".banner")!.textContent).toContain("retry");
  });
});

describe("submit_grade", () => {
  it("submits and advances to the next-ranked item", async () => {
    await app.start();
    app.setGrade(7.5);
    await app.submitGrade();
    expect(service.labels).toEqual([{ id: "traj-b", grade: 7.5 }]);
    expect(app.displayedId).toBe("traj-c");
    expect(root.querySelector(".progress")!.textContent).toContain("1 / 3");
  });

  it("rejects out-of-range grades inline without any request", async () => {
    await app.start();
    const calls = () => (fetch as ReturnType<typeof vi.fn>).mock.calls
      .filter(([url]) => String(url).endsWith("/labels")).length;
    app.setGrade(11);
    await app.submitGrade();
    expect(calls()).toBe(0);
    expect(root.querySelector(".validation")!.textContent).toContain("[0, 10]");
    expect(service.labels.length).toBe(0);
  });

  it("submit is disabled until a grade is chosen", async () => {
    await app.start();
    const button = root.querySelector("button.submit") as HTMLButtonElement;
    expect(button.disabled).toBe(true);
    app.setGrade(5);
    expect(button.disabled).toBe(false);
  });

  it("two rapid submits never double-label an item", async () => {
    await app.start();
    app.setGrade(6);
    const first = app.submitGrade();
    const second = app.submitGrade();  // still in flight: ignored
    await Promise.all([first, second]);
    expect(service.labels.length).toBe(1);
    app.setGrade(4);
    await app.submitGrade();
    expect(service.labels.length).toBe(2);
    expect(service.labels[1]!.id).not.toBe(service.labels[0]!.id);
  });

  it("conflict responses refresh the displayed item", async () => {
    await app.start();
    service.items.find((it) => it.id === "traj-b")!.labeled = true;
    app.setGrade(5);
    await app.submitGrade();
    expect(root.querySelector(".banner")!.textContent).toContain("refreshed");
    expect(app.displayedId).toBe("traj-c");
  });
});

describe("show_progress", () => {
  it("tracks labeled counts and the retrain cadence", async () => {
    await app.start();
    for (const grade of [5, 6, 7]) {
      app.setGrade(grade);
      await app.submitGrade();
    }
    const progress = await app.refreshProgress();
    expect(progress).toEqual({ labeled: 3, pending: 0, retrain_count: 1 });
    expect(root.querySelector(".progress")!.textContent).toContain("3 / 3");
    expect(root.querySelector(".progress")!.textContent).toContain("retrains 1");
  });

  it("marks the display stale on failure but keeps the last value", async () => {
    await app.start();
    const good = root.querySelector(".progress")!.textContent;
    service.handler = () => { throw new TypeError("down"); };
    await app.refreshProgress();
    expect(root.querySelector(".progress")!.classList.contains("stale")).toBe(true);
    expect(root.querySelector(".progress")!.textContent).toBe(good);
  });
});
