/** Typed client for the annotation service; fetch is injectable for tests. */

import type { AnnotationTask, Criterion, Progress, TieGroupedOrder } from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export type SubmitResult =
  | { ok: true }
  | { ok: false; error: "stale_claim" | "invalid_order" | "http_error"; detail: string };

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  /** Claim the next open task; null means the pool is exhausted. */
  async nextTask(annotator: string): Promise<AnnotationTask | null> {
    const response = await this.fetchImpl(
      this.url(`/api/tasks/next?annotator=${encodeURIComponent(annotator)}`),
    );
    if (response.status === 204) {
      return null;
    }
    if (!response.ok) {
      throw new Error(`next task failed: HTTP ${response.status}`);
    }
    return (await response.json()) as AnnotationTask;
  }

  async getTask(taskId: string): Promise<AnnotationTask> {
    const response = await this.fetchImpl(this.url(`/api/tasks/${encodeURIComponent(taskId)}`));
    if (!response.ok) {
      throw new Error(`task fetch failed: HTTP ${response.status}`);
    }
    return (await response.json()) as AnnotationTask;
  }

  async submitRanking(
    taskId: string,
    annotator: string,
    order: TieGroupedOrder,
  ): Promise<SubmitResult> {
    const response = await this.fetchImpl(
      this.url(`/api/tasks/${encodeURIComponent(taskId)}/ranking`),
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ annotator_id: annotator, order }),
      },
    );
    if (response.ok) {
      return { ok: true };
    }
    let detail = `HTTP ${response.status}`;
    let error: "stale_claim" | "invalid_order" | "http_error" = "http_error";
    try {
      const body = (await response.json()) as { error?: string; detail?: string };
      if (body.error === "stale_claim" || body.error === "invalid_order") {
        error = body.error;
      }
      detail = body.detail ?? detail;
    } catch {
      // non-JSON error body; keep the status line
    }
    return { ok: false, error, detail };
  }

  async criteria(): Promise<Criterion[]> {
    const response = await this.fetchImpl(this.url("/api/criteria"));
    if (!response.ok) {
      throw new Error(`criteria fetch failed: HTTP ${response.status}`);
    }
    const body = (await response.json()) as { criteria: Criterion[] };
    return body.criteria;
  }

  async progress(): Promise<Progress> {
    const response = await this.fetchImpl(this.url("/api/progress"));
    if (!response.ok) {
      throw new Error(`progress fetch failed: HTTP ${response.status}`);
    }
    return (await response.json()) as Progress;
  }
}
