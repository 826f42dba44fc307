/**
 * In-memory stand-in for the run service, wired from recorded fixtures
 * (see scripts/record-fixtures.py). Implements the same fetch surface the
 * browser provides, records every correction it receives, and can simulate
 * outages and slow responses.
 */

import type { FetchLike, ResponseLike } from "../src/api.js";
import type { CorrectionBody } from "../src/types.js";

import askDoc from "./fixtures/ask.json";
import correction1 from "./fixtures/correction-1.json";
import correction2 from "./fixtures/correction-2.json";
import kgStats from "./fixtures/kg-stats.json";
import runAfter from "./fixtures/run-after.json";
import runBefore from "./fixtures/run-before.json";
import runFallback from "./fixtures/run-fallback.json";
import runFinal from "./fixtures/run-final.json";
import traceAfter from "./fixtures/trace-after.json";
import traceBefore from "./fixtures/trace-before.json";
import traceFallback from "./fixtures/trace-fallback.json";
import traceFinal from "./fixtures/trace-final.json";

interface Reply {
  status: number;
  body: unknown;
}

function copy<T>(doc: T): T {
  return JSON.parse(JSON.stringify(doc)) as T;
}

function reply(status: number, body: unknown): ResponseLike {
  return {
    ok: status >= 200 && status < 300,
    status,
    json: () => Promise.resolve(copy(body)),
  };
}

export class MockServer {
  readonly corrections: { runId: string; body: CorrectionBody }[] = [];
  private readonly gets = new Map<string, unknown>();
  private readonly correctionQueues = new Map<string, Reply[]>();
  private askReply: Reply = { status: 200, body: askDoc };
  private readonly failing = new Set<string>();
  private readonly holds = new Map<string, Promise<void>>();

  get(path: string, doc: unknown): void {
    this.gets.set(path, doc);
  }

  /** Queue one reply for POST /runs/{id}/correct. */
  onCorrect(runId: string, status: number, body: unknown): void {
    const queue = this.correctionQueues.get(runId) ?? [];
    queue.push({ status, body });
    this.correctionQueues.set(runId, queue);
  }

  /** Drop anything queued for the run and serve only this reply. */
  setCorrect(runId: string, status: number, body: unknown): void {
    this.correctionQueues.set(runId, [{ status, body }]);
  }

  onAsk(status: number, body: unknown): void {
    this.askReply = { status, body };
  }

  /** Requests whose path starts with the prefix fail with a network error. */
  fail(prefix: string): void {
    this.failing.add(prefix);
  }

  heal(prefix?: string): void {
    if (prefix === undefined) this.failing.clear();
    else this.failing.delete(prefix);
  }

  /** Delay matching requests until the returned release function is called. */
  hold(prefix: string): () => void {
    let release!: () => void;
    const barrier = new Promise<void>((resolve) => {
      release = resolve;
    });
    this.holds.set(prefix, barrier);
    return () => {
      this.holds.delete(prefix);
      release();
    };
  }

  fetch: FetchLike = async (url, init) => {
    const path = url.replace(/^https?:\/\/[^/]+/, "").split("?")[0] ?? "";
    for (const prefix of this.failing) {
      if (path.startsWith(prefix)) throw new Error(`network error: ${path}`);
    }
    const barrier = [...this.holds.entries()].find(([prefix]) => path.startsWith(prefix));
    if (barrier) await barrier[1];

    const method = (init?.method ?? "GET").toUpperCase();
    if (method === "GET") {
      const doc = this.gets.get(path);
      return doc === undefined
        ? reply(404, { detail: `no fixture for ${path}` })
        : reply(200, doc);
    }
    if (method === "POST" && path === "/ask") {
      return reply(this.askReply.status, this.askReply.body);
    }
    const correct = path.match(/^\/runs\/([^/]+)\/correct$/);
    if (method === "POST" && correct) {
      const runId = correct[1] ?? "";
      this.corrections.push({
        runId,
        body: JSON.parse(init?.body ?? "{}") as CorrectionBody,
      });
      const queued = this.correctionQueues.get(runId)?.shift();
      return queued
        ? reply(queued.status, queued.body)
        : reply(404, { detail: `run ${runId} not found` });
    }
    return reply(404, { detail: `no fixture for ${method} ${path}` });
  };
}

export const ids = {
  runA: (traceBefore as { run_id: string }).run_id,
  runB: (traceAfter as { run_id: string }).run_id,
  runC: (traceFinal as { run_id: string }).run_id,
  runD: (traceFallback as { run_id: string }).run_id,
};

/** A server preloaded with the whole recorded correction scenario. */
export function canberraServer(): MockServer {
  const server = new MockServer();
  server.get("/kg/stats", kgStats);
  server.get(`/runs/${ids.runA}`, runBefore);
  server.get(`/runs/${ids.runA}/trace`, traceBefore);
  server.get(`/runs/${ids.runB}`, runAfter);
  server.get(`/runs/${ids.runB}/trace`, traceAfter);
  server.get(`/runs/${ids.runC}`, runFinal);
  server.get(`/runs/${ids.runC}/trace`, traceFinal);
  server.get(`/runs/${ids.runD}`, runFallback);
  server.get(`/runs/${ids.runD}/trace`, traceFallback);
  server.onCorrect(ids.runA, 200, correction1);
  server.onCorrect(ids.runB, 200, correction2);
  return server;
}
