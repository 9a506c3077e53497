/** Typed client for the labeling service HTTP API. */

export interface QueueItemPayload {
  id: string;
  features: number[];
  score: number;
  window: number;
  r1: [number, number];
  r2: [number, number];
  /** rows of (t, y1, y2, r1, r2) */
  samples: [number, number, number, number, number][];
}

export interface Progress {
  labeled: number;
  pending: number;
  retrain_count: number;
}

export class ApiError extends Error {
  constructor(message: string, public readonly status: number) {
    super(message);
    this.name = "ApiError";
  }
}

async function detail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    return typeof body.detail === "string" ? body.detail : JSON.stringify(body);
  } catch {
    return response.statusText;
  }
}

export class LabelingApi {
  constructor(private readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  /** Returns the next pending item, or null when everything is labeled. */
  async nextItem(): Promise<QueueItemPayload | null> {
    const response = await fetch(this.url("/queue/next"));
    if (!response.ok) {
      throw new ApiError(await detail(response), response.status);
    }
    const body = await response.json();
    return body.empty ? null : (body.item as QueueItemPayload);
  }

  async submitLabel(id: string, grade: number): Promise<void> {
    const response = await fetch(this.url("/labels"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ id, grade }),
    });
    if (!response.ok) {
      throw new ApiError(await detail(response), response.status);
    }
  }

  async progress(): Promise<Progress> {
    const response = await fetch(this.url("/progress"));
    if (!response.ok) {
      throw new ApiError(await detail(response), response.status);
    }
    return (await response.json()) as Progress;
  }

  async exportDataset(): Promise<string> {
    const response = await fetch(this.url("/dataset/export"));
    if (!response.ok) {
      throw new ApiError(await detail(response), response.status);
    }
    return await response.text();
  }
}
