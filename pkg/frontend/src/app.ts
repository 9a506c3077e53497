/** Grading loop controller: fetch, render, collect the grade, advance.
 *
 * The app never reorders the queue; whatever the service returns from
 * GET /queue/next is what the grader sees, and the only mutation it performs
 * is POST /labels.  Submission is disabled until a grade is chosen and while
 * a submit is in flight, so rapid clicks can never double-label an item.
 */

import { ApiError, LabelingApi, Progress, QueueItemPayload } from "./api.js";
import { renderTrajectoryView } from "./chart.js";

export const GRADE_MIN = 0;
export const GRADE_MAX = 10;
export const GRADE_STEP = 0.1;

export interface AppOptions {
  progressPollMs?: number;
}

export class GradingApp {
  readonly api: LabelingApi;
  private readonly root: HTMLElement;
  private readonly pollMs: number;

  current: QueueItemPayload | null = null;
  private chosenGrade: number | null = null;
  private submitting = false;
  private pollTimer: ReturnType<typeof setInterval> | null = null;
  private lastProgressAt: Date | null = null;

  private charts!: HTMLElement;
  private meta!: HTMLElement;
  private banner!: HTMLElement;
  private progressEl!: HTMLElement;
  private doneEl!: HTMLElement;
  private gradeSlider!: HTMLInputElement;
  private gradeNumber!: HTMLInputElement;
  private submitButton!: HTMLButtonElement;
  private refreshButton!: HTMLButtonElement;
  private validationEl!: HTMLElement;

  constructor(root: HTMLElement, api: LabelingApi, options: AppOptions = {}) {
    this.root = root;
    this.api = api;
    this.pollMs = options.progressPollMs ?? 5000;
    this.buildScaffold();
  }

  private buildScaffold(): void {
    this.root.innerHTML = "";
    this.banner = this.el("div", "banner");
    this.progressEl = this.el("div", "progress");
    this.progressEl.textContent = "progress unknown";
    this.charts = this.el("div", "charts");
    this.meta = this.el("div", "meta");
    this.validationEl = this.el("div", "validation");

    const controls = this.el("div", "grade-control");
    this.gradeSlider = document.createElement("input");
    this.gradeSlider.type = "range";
    this.gradeSlider.min = String(GRADE_MIN);
    this.gradeSlider.max = String(GRADE_MAX);
    this.gradeSlider.step = String(GRADE_STEP);
    this.gradeSlider.className = "grade-slider";
    this.gradeSlider.addEventListener("input", () => {
      this.setGrade(Number(this.gradeSlider.value));
      this.gradeNumber.value = this.gradeSlider.value;
    });

    this.gradeNumber = document.createElement("input");
    this.gradeNumber.type = "number";
    this.gradeNumber.min = String(GRADE_MIN);
    this.gradeNumber.max = String(GRADE_MAX);
    this.gradeNumber.step = String(GRADE_STEP);
    this.gradeNumber.className = "grade-number";
    this.gradeNumber.addEventListener("input", () => {
      this.setGrade(this.gradeNumber.value === "" ? null
        : Number(this.gradeNumber.value));
    });

    this.submitButton = document.createElement("button");
    this.submitButton.textContent = "submit grade";
    this.submitButton.className = "submit";
    this.submitButton.disabled = true;
    this.submitButton.addEventListener("click", () => {
      void this.submitGrade();
    });

    this.refreshButton = document.createElement("button");
    this.refreshButton.textContent = "refresh item";
    this.refreshButton.className = "refresh";
    this.refreshButton.addEventListener("click", () => {
      void this.fetchNext();
    });

    controls.append(this.gradeSlider, this.gradeNumber, this.submitButton,
                    this.refreshButton, this.validationEl);

    this.doneEl = this.el("div", "done");
    this.doneEl.hidden = true;
    this.doneEl.textContent = "all trajectories labeled";

    this.root.append(this.banner, this.progressEl, this.charts, this.meta,
                     controls, this.doneEl);
  }

  private el(tag: string, className: string): HTMLElement {
    const node = document.createElement(tag);
    node.className = className;
    return node;
  }

  /** Grade selection state; submit stays disabled until a grade is chosen. */
  setGrade(value: number | null): void {
    this.chosenGrade = value;
    this.validationEl.textContent = "";
    this.submitButton.disabled =
      value === null || this.submitting || this.current === null;
  }

  get displayedId(): string | null {
    return this.current?.id ?? null;
  }

  async start(): Promise<void> {
    await this.refreshProgress();
    await this.fetchNext();
    if (this.pollMs > 0) {
      this.pollTimer = setInterval(() => {
        void this.refreshProgress();
      }, this.pollMs);
    }
  }

  stop(): void {
    if (this.pollTimer !== null) {
      clearInterval(this.pollTimer);
      this.pollTimer = null;
    }
  }

  async fetchNext(): Promise<void> {
    try {
      const item = await this.api.nextItem();
      this.banner.textContent = "";
      this.current = item;
      this.chosenGrade = null;
      this.gradeNumber.value = "";
      this.submitButton.disabled = true;
      this.renderItem();
    } catch (error) {
      this.banner.textContent =
        `service unreachable (${String(error)}); retry in a moment`;
      this.banner.classList.add("error");
    }
  }

  private renderItem(): void {
    this.charts.innerHTML = "";
    this.meta.textContent = "";
    if (this.current === null) {
      this.doneEl.hidden = false;
      return;
    }
    this.doneEl.hidden = true;
    this.charts.appendChild(renderTrajectoryView(
      this.current.samples, this.current.r1, this.current.r2,
      this.current.window,
    ));
    const f = this.current.features.map((v) => v.toFixed(3));
    this.meta.textContent =
      `${this.current.id} | score ${this.current.score.toExponential(2)} | ` +
      `ov/un/settle/sse y1: ${f.slice(0, 4).join(" ")} y2: ${f.slice(4).join(" ")}`;
  }

  /** Client-side validation mirroring the service contract. */
  validateGrade(value: number | null): string | null {
    if (value === null || Number.isNaN(value)) {
      return "choose a grade first";
    }
    if (value < GRADE_MIN || value > GRADE_MAX) {
      return `grade must lie in [${GRADE_MIN}, ${GRADE_MAX}]`;
    }
    return null;
  }

  async submitGrade(): Promise<void> {
    if (this.submitting || this.current === null) {
      return;
    }
    const problem = this.validateGrade(this.chosenGrade);
    if (problem !== null) {
      this.validationEl.textContent = problem;  // no request leaves the app
      return;
    }
    this.submitting = true;
    this.submitButton.disabled = true;
    try {
      await this.api.submitLabel(this.current.id, this.chosenGrade as number);
      await this.refreshProgress();
      await this.fetchNext();
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        await this.fetchNext();
        this.banner.textContent = "item was already labeled elsewhere; refreshed";
      } else if (error instanceof ApiError && error.status === 422) {
        this.validationEl.textContent = error.message;
      } else {
        this.banner.textContent = `submit failed: ${String(error)}`;
        this.banner.classList.add("error");
      }
    } finally {
      this.submitting = false;
      this.submitButton.disabled = this.chosenGrade === null || this.current === null;
    }
  }

  async refreshProgress(): Promise<Progress | null> {
    try {
      const progress = await this.api.progress();
      this.lastProgressAt = new Date();
      const total = progress.labeled + progress.pending;
      this.progressEl.textContent =
        `${progress.labeled} / ${total} labeled | retrains ${progress.retrain_count}` +
        ` | updated ${this.lastProgressAt.toLocaleTimeString()}`;
      this.progressEl.classList.remove("stale");
      return progress;
    } catch {
      this.progressEl.classList.add("stale");  // stale data kept visible
      return null;
    }
  }
}
