// Shared fakes: a deterministic in-memory service with the same payload
// shapes as the real one.

import { vi } from "vitest";
import {
  AuditResponse,
  ExplainResponse,
  RankResponse,
  StatsResponse,
} from "../src/api.js";

export const sigmoid = (z: number) => 1 / (1 + Math.exp(-z));

export interface FakeWorld {
  rank: RankResponse;
  explainByAnswer: Record<string, ExplainResponse>;
  auditScore: (answer: string, mask: number[]) => AuditResponse;
  stats: StatsResponse;
  calls: { path: string; body: unknown }[];
}

export function makeFakeWorld(): FakeWorld {
  const rank: RankResponse = {
    session_id: "sess-1",
    query: "alpha [MASK] beta",
    k: 4,
    c: 0.5,
    ordering: "corrected",
    answers: [
      { answer_id: "E01", logit: 1.4, prob: sigmoid(1.4), f_c: 0.11,
        corrected_logit: 1.51, rank: 1 },
      { answer_id: "E00", logit: 1.0, prob: sigmoid(1.0), f_c: -0.2,
        corrected_logit: 0.8, rank: 2 },
      { answer_id: "E02", logit: -0.5, prob: sigmoid(-0.5), f_c: 0.3,
        corrected_logit: -0.2, rank: 3 },
    ],
  };
  const shapleys = [0.9, 0.35, -0.15, 0.1];
  const baseline = -1.0;
  const explainByAnswer: Record<string, ExplainResponse> = {};
  for (const a of rank.answers) {
    explainByAnswer[a.answer_id] = {
      answer_id: a.answer_id,
      baseline,
      total: baseline + shapleys.reduce((s, v) => s + v, 0),
      output_space: "logit",
      bias_term: a.f_c,
      n_permutations: 100,
      evidence: shapleys.map((phi, i) => ({
        index: i,
        passage_id: `p${i}`,
        text: `[MASK] evidence sentence ${i}`,
        doc_id: `d${i}`,
        year: 2000 + i,
        source: "",
        similarity: 0.9 - 0.1 * i,
        shapley: phi,
      })),
    };
  }
  const auditScore = (answer: string, mask: number[]): AuditResponse => {
    const kept = shapleys.filter((_, i) => !mask.includes(i));
    const logit = baseline + kept.reduce((s, v) => s + v, 0);
    const oldScore = sigmoid(baseline + shapleys.reduce((s, v) => s + v, 0));
    return {
      answer_id: answer,
      masked_evidence: [...mask].sort((x, y) => x - y),
      old_score: oldScore,
      new_score: sigmoid(logit),
      delta: sigmoid(logit) - oldScore,
    };
  };
  return {
    rank,
    explainByAnswer,
    auditScore,
    stats: {
      answers: { E00: 10, E01: 20, E02: 5 },
      splits: { S1: 30, S2: 10, S3: 5 },
      index_checksum: "c".repeat(64),
      n_passages: 45,
      answer_set_size: 3,
    },
    calls: [],
  };
}

export function installFakeFetch(world: FakeWorld,
                                 failAudit: { value: boolean } = { value: false }) {
  const impl = async (url: string, init?: RequestInit) => {
    const body = init?.body ? JSON.parse(init.body as string) : null;
    world.calls.push({ path: url, body });
    const json = (status: number, payload: unknown) =>
      new Response(JSON.stringify(payload), { status });
    if (url.endsWith("/rank")) return json(200, world.rank);
    if (url.endsWith("/explain")) {
      const payload = world.explainByAnswer[(body as any).answer_id];
      return payload ? json(200, payload)
        : json(404, { code: "unknown_answer", message: "nope" });
    }
    if (url.endsWith("/audit")) {
      if (failAudit.value) {
        return json(422, { code: "index_out_of_range", message: "bad index" });
      }
      const b = body as { answer_id: string; masked_evidence: number[] };
      return json(200, world.auditScore(b.answer_id, b.masked_evidence));
    }
    if (url.endsWith("/corpus/stats")) return json(200, world.stats);
    return json(404, { code: "error", message: `no route ${url}` });
  };
  vi.stubGlobal("fetch", vi.fn(impl));
}

export const flush = () => new Promise((resolve) => setTimeout(resolve, 0));
