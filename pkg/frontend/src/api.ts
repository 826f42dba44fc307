/**
 * Thin client for the run service. Every method maps to one documented
 * endpoint; nothing is cached or derived here. The fetch function is
 * injectable so tests can run against a recorded-fixture mock server.
 */

import type {
  AskResponse,
  CorrectionBody,
  CorrectionResponse,
  KgStats,
  RunSummary,
  TraceDocument,
} from "./types.js";

export interface ResponseLike {
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<ResponseLike>;

/** A non-2xx reply; `detail` is the service's rejection body, verbatim. */
export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`${status}: ${detail}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

function defaultFetch(
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
): Promise<ResponseLike> {
  return fetch(url, init);
}

async function unwrap<T>(response: ResponseLike): Promise<T> {
  if (!response.ok) {
    let detail = `request failed with status ${response.status}`;
    try {
      const body = (await response.json()) as { detail?: unknown };
      if (body && body.detail !== undefined) {
        detail =
          typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
      }
    } catch {
      // non-JSON error body; keep the generic detail
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl = "", fetchFn: FetchLike = defaultFetch) {
    this.base = baseUrl.replace(/\/$/, "");
    this.fetchFn = fetchFn;
  }

  private get<T>(path: string): Promise<T> {
    return this.fetchFn(this.base + path).then((r) => unwrap<T>(r));
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => unwrap<T>(r));
  }

  ask(question: string): Promise<AskResponse> {
    return this.post("/ask", { question });
  }

  run(runId: string): Promise<RunSummary> {
    return this.get(`/runs/${encodeURIComponent(runId)}`);
  }

  trace(runId: string): Promise<TraceDocument> {
    return this.get(`/runs/${encodeURIComponent(runId)}/trace`);
  }

  correct(runId: string, body: CorrectionBody): Promise<CorrectionResponse> {
    return this.post(`/runs/${encodeURIComponent(runId)}/correct`, body);
  }

  stats(): Promise<KgStats> {
    return this.get("/kg/stats");
  }

  /**
   * Run ids from the given run back to its root, oldest last, by following
   * parent_run_id links. Tolerates cycles in hand-edited stores.
   */
  async provenance(runId: string): Promise<string[]> {
    const chain: string[] = [];
    const seen = new Set<string>();
    let current: string | null = runId;
    while (current !== null && !seen.has(current)) {
      seen.add(current);
      chain.push(current);
      let summary: RunSummary;
      try {
        summary = await this.run(current);
      } catch {
        break; // parent record missing; the chain ends here
      }
      current = summary.parent_run_id;
    }
    return chain;
  }
}
