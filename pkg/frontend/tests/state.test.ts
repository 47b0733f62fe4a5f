// Store behavior: masks mirror server acknowledgments, one in-flight audit
// per answer with coalescing, optimistic rollback on failure.

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";
import { ApiClient } from "../src/api.js";
import { AuditStore } from "../src/state.js";
import { flush, installFakeFetch, makeFakeWorld, sigmoid } from "./helpers.js";

describe("AuditStore", () => {
  let world: ReturnType<typeof makeFakeWorld>;
  let store: AuditStore;
  const failAudit = { value: false };

  beforeEach(async () => {
    world = makeFakeWorld();
    failAudit.value = false;
    installFakeFetch(world, failAudit);
    store = new AuditStore(new ApiClient(""));
    await store.submitQuery("alpha [MASK] beta");
  });

  afterEach(() => {
    vi.unstubAllGlobals();
  });

  it("records the rank payload verbatim", () => {
    expect(store.session?.rank).toEqual(world.rank);
    expect(store.error).toBeNull();
  });

  it("toggle-none keeps the original score", () => {
    expect(store.displayedScore("E01")).toBe(sigmoid(1.4));
  });

  it("toggle sends the complete mask and mirrors the ack", async () => {
    await store.toggleEvidence("E01", 2);
    await store.toggleEvidence("E01", 0);
    const audits = world.calls.filter((c) => c.path.endsWith("/audit"));
    expect(audits.map((c) => (c.body as any).masked_evidence))
      .toEqual([[2], [0, 2]]);
    expect([...store.audit("E01").mask].sort()).toEqual([0, 2]);
    const want = world.auditScore("E01", [0, 2]).new_score;
    expect(store.displayedScore("E01")).toBe(want);
  });

  it("re-toggling undoes a mask entry", async () => {
    await store.toggleEvidence("E01", 1);
    await store.toggleEvidence("E01", 1);
    expect(store.audit("E01").mask.size).toBe(0);
    expect(store.displayedScore("E01")).toBe(
      world.auditScore("E01", []).new_score);
  });

  it("coalesces toggles while a request is in flight", async () => {
    const p1 = store.toggleEvidence("E01", 0);
    const p2 = store.toggleEvidence("E01", 1);
    const p3 = store.toggleEvidence("E01", 2);
    await Promise.all([p1, p2, p3]);
    const audits = world.calls.filter((c) => c.path.endsWith("/audit"));
    // first request carried [0]; the two queued toggles coalesced into one
    expect(audits.length).toBeLessThanOrEqual(2);
    expect((audits.at(-1)!.body as any).masked_evidence).toEqual([0, 1, 2]);
    expect([...store.audit("E01").mask].sort()).toEqual([0, 1, 2]);
  });

  it("tracks score history as pre/post pairs", async () => {
    await store.toggleEvidence("E01", 0);
    await store.toggleEvidence("E01", 1);
    const history = store.audit("E01").history;
    expect(history[0]).toEqual({ score: sigmoid(0.2), maskSize: 0 });
    expect(history.length).toBe(3);
    expect(history.at(-1)!.maskSize).toBe(2);
  });

  it("rolls back the optimistic flip when the service rejects", async () => {
    failAudit.value = true;
    await store.toggleEvidence("E01", 3);
    expect(store.error).toContain("index_out_of_range");
    expect(store.audit("E01").mask.size).toBe(0);
    expect(store.effectiveMask("E01").size).toBe(0);
    expect(store.displayedScore("E01")).toBe(sigmoid(1.4)); // original
  });

  it("selecting an answer fetches its attribution in logit space", async () => {
    await store.selectAnswer("E00");
    await flush();
    expect(store.session?.explain?.answer_id).toBe("E00");
    const explains = world.calls.filter((c) => c.path.endsWith("/explain"));
    expect((explains[0].body as any).output_space).toBe("logit");
  });

  it("surfaces rank errors inline", async () => {
    vi.stubGlobal("fetch", vi.fn(async () =>
      new Response(JSON.stringify({ code: "empty_query", message: "empty" }),
                   { status: 400 })));
    await store.submitQuery("   ");
    expect(store.error).toContain("empty_query");
  });
});
