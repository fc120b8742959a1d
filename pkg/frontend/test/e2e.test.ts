/** Scripted end-to-end loop against a live service instance.
 *
 * Drives the HTTP API exactly the way the UI does: create a session, pull
 * the query batch, tag every token through a BatchDraft, submit, wait for
 * the retrain, check that a new metrics point appeared, and verify that a
 * duplicate submission does not change the cost ledger.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AnnotationApi, batchIdempotencyKey } from "../src/api.js";
import { BatchDraft } from "../src/state.js";

const PORT = 8700 + Math.floor(Math.random() * 800);
const BASE = `http://127.0.0.1:${PORT}`;

let service: ChildProcess | null = null;
const api = new AnnotationApi(BASE);

const CONFIG = {
  corpus: { synthetic: { n_sentences: 80, seed: 5 } },
  embeddings: { synthetic: { dim: 8, separation: 6.0, seed: 2 } },
  split: { fractions: [0.7, 0.15, 0.15], seed: 1 },
  al: { m: 2, strategy: "total", measure: "TE", max_iterations: 3 },
  train: { max_iterations: 20 },
};

async function waitForService(timeoutMs = 60_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const response = await fetch(`${BASE}/sessions`);
      if (response.ok) return;
    } catch {
      /* not up yet */
    }
    if (Date.now() > deadline) throw new Error("service did not come up");
    await new Promise((resolve) => setTimeout(resolve, 300));
  }
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "alseq-e2e-"));
  const configPath = join(dir, "config.json");
  writeFileSync(configPath, JSON.stringify(CONFIG));
  service = spawn(
    "python3",
    ["-m", "alseq.cli", "serve", "--config", configPath, "--port", String(PORT)],
    { stdio: "ignore" },
  );
  await waitForService();
}, 90_000);

afterAll(() => {
  service?.kill("SIGTERM");
});

describe("annotator loop", () => {
  it("runs create -> label -> retrain -> next batch, idempotently", async () => {
    const created = await api.createSession("default", { seed: 11 });
    expect(created.status).toBe("awaiting_annotation");
    expect(created.pending_sentences).toBe(4); // 2^2

    const query = await api.getQuery(created.session_id);
    expect(query.status).toBe("awaiting_annotation");
    expect(query.batch).toHaveLength(4);

    // Label every token the way the UI does (span + outside hotkeys).
    const draft = new BatchDraft(created.label_scheme, query.batch);
    for (const sentence of query.batch) {
      sentence.tokens.forEach((_, i) => draft.setTag(sentence.sentence_id, i, "O"));
      if (sentence.tokens.length >= 2) {
        draft.tagSpan(sentence.sentence_id, 0, 1, draft.entityClasses[0]);
      }
    }
    expect(draft.complete()).toBe(true);

    const metricsBefore = await api.getMetrics(created.session_id);
    expect(metricsBefore.curve).toHaveLength(0);

    const key = batchIdempotencyKey(created.session_id, created.iteration);
    const submission = { idempotency_key: key, annotations: draft.toAnnotations() };
    const first = await api.submitAnnotations(created.session_id, submission);
    expect(first.batch_complete).toBe(true);

    const ready = await api.waitUntilReady(created.session_id);
    expect(["awaiting_annotation", "ready", "completed"]).toContain(ready.status);

    // Retraining produced a new learning-curve point and counted cost once.
    const metricsAfter = await api.getMetrics(created.session_id);
    expect(metricsAfter.curve).toHaveLength(1);
    expect(metricsAfter.curve[0].f1).toBeGreaterThanOrEqual(0);
    expect(metricsAfter.cost.sentences).toBe(4);

    // Duplicate submission (client retry) replays and does not double-count.
    const replay = await api.submitAnnotations(created.session_id, submission);
    expect(replay).toEqual(first);
    const metricsReplay = await api.getMetrics(created.session_id);
    expect(metricsReplay.cost).toEqual(metricsAfter.cost);
    expect(metricsReplay.curve).toHaveLength(1);

    // The next batch doubled in size and carries model pre-fills.
    const next = await api.getQuery(created.session_id);
    expect(next.status).toBe("awaiting_annotation");
    expect(next.batch).toHaveLength(8);
    expect(next.batch[0].suggested_tags).not.toBeNull();
    expect(next.batch[0].suggested_tags).toHaveLength(next.batch[0].tokens.length);
  }, 120_000);

  it("rejects tags outside the scheme with a named tag", async () => {
    const created = await api.createSession("default", { seed: 12 });
    const query = await api.getQuery(created.session_id);
    const target = query.batch[0];
    await expect(
      api.submitAnnotations(created.session_id, {
        idempotency_key: "bad-tag",
        annotations: [
          {
            sentence_id: target.sentence_id,
            tags: Array(target.tokens.length).fill("B-Nope"),
          },
        ],
      }),
    ).rejects.toThrow(/B-Nope/);
  }, 60_000);

  it("accepts partial submissions without triggering a retrain", async () => {
    const created = await api.createSession("default", { seed: 13 });
    const query = await api.getQuery(created.session_id);
    const sentence = query.batch[0];
    const partial = await api.submitAnnotations(created.session_id, {
      idempotency_key: "partial-1",
      annotations: [
        {
          sentence_id: sentence.sentence_id,
          tags: Array(sentence.tokens.length).fill("O"),
        },
      ],
    });
    expect(partial.batch_complete).toBe(false);
    expect(partial.remaining).toBe(query.batch.length - 1);
    const view = await api.getSession(created.session_id);
    expect(view.status).toBe("awaiting_annotation");
    expect(view.cost.sentences).toBe(0); // nothing committed yet
  }, 60_000);
});
