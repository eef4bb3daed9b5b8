/** Thin client for the estimation service. */

import type { EstimateRequest, JobSnapshot } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    message: string,
    public status: number,
  ) {
    super(message);
  }
}

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  onUpdate?: (snapshot: JobSnapshot) => void;
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const body = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const detail = (body as { error?: string }).error ?? resp.statusText;
      throw new ApiError(detail, resp.status);
    }
    return body as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("/api/health");
  }

  async submitEstimate(request: EstimateRequest): Promise<string> {
    const body = await this.request<{ job_id: string }>("/api/estimate", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    return body.job_id;
  }

  getJob(jobId: string): Promise<JobSnapshot> {
    return this.request(`/api/jobs/${jobId}`);
  }

  async submitWhatIf(jobId: string, include: string[]): Promise<string> {
    const body = await this.request<{ job_id: string }>("/api/whatif", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ job_id: jobId, include }),
    });
    return body.job_id;
  }

  /** Poll until the job settles; resolves with the final snapshot. */
  async pollJob(jobId: string, options: PollOptions = {}): Promise<JobSnapshot> {
    const interval = options.intervalMs ?? 1000;
    const deadline = Date.now() + (options.timeoutMs ?? 300_000);
    for (;;) {
      const snapshot = await this.getJob(jobId);
      options.onUpdate?.(snapshot);
      if (snapshot.state === "done" || snapshot.state === "failed") {
        return snapshot;
      }
      if (Date.now() > deadline) {
        throw new ApiError(`job ${jobId} did not settle in time`, 0);
      }
      await sleep(interval);
    }
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
