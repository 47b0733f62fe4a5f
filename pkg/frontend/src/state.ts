// Client session state for the audit loop.
//
// The server owns every score: the store records payloads and the local
// audit mask, and guarantees at most one in-flight /audit per answer by
// coalescing queued toggles into the next request.

import {
  ApiClient,
  AuditResponse,
  ExplainResponse,
  RankResponse,
} from "./api.js";

export interface ScorePoint {
  score: number;      // probability reported by the server
  maskSize: number;
}

export interface AnswerAudit {
  mask: Set<number>;           // rows currently marked irrelevant (server-acked)
  pending: Set<number> | null; // coalesced mask waiting to be sent
  sent: Set<number> | null;    // mask of the request currently in flight
  inFlight: boolean;
  history: ScorePoint[];       // pre/post audit score pairs, oldest first
  lastAudit: AuditResponse | null;
}

export interface UiSession {
  rank: RankResponse;
  selectedAnswer: string | null;
  explain: ExplainResponse | null;
  audits: Map<string, AnswerAudit>;
}

export type Listener = () => void;

export class AuditStore {
  session: UiSession | null = null;
  error: string | null = null;
  constructor(public api: ApiClient) {}

  private listeners: Listener[] = [];

  subscribe(fn: Listener): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  async submitQuery(query: string, k?: number, c?: number): Promise<void> {
    this.error = null;
    try {
      const rank = await this.api.rank(query, k, c);
      this.session = {
        rank,
        selectedAnswer: null,
        explain: null,
        audits: new Map(),
      };
    } catch (e) {
      this.error = String(e);
    }
    this.emit();
  }

  restore(rank: RankResponse, selectedAnswer: string | null = null): void {
    this.session = { rank, selectedAnswer, explain: null, audits: new Map() };
    this.emit();
  }

  audit(answerId: string): AnswerAudit {
    const session = this.mustSession();
    let entry = session.audits.get(answerId);
    if (!entry) {
      entry = { mask: new Set(), pending: null, sent: null, inFlight: false,
                history: [], lastAudit: null };
      session.audits.set(answerId, entry);
    }
    return entry;
  }

  async selectAnswer(answerId: string): Promise<void> {
    const session = this.mustSession();
    session.selectedAnswer = answerId;
    session.explain = null;
    this.emit();
    await this.refreshExplanation();
  }

  async refreshExplanation(): Promise<void> {
    const session = this.mustSession();
    if (!session.selectedAnswer) return;
    this.error = null;
    try {
      session.explain = await this.api.explain(
        session.rank.session_id, session.selectedAnswer, "logit");
    } catch (e) {
      this.error = String(e);
    }
    this.emit();
  }

  /** Toggle one evidence row; resolves when the server state settles. */
  async toggleEvidence(answerId: string, index: number): Promise<void> {
    const entry = this.audit(answerId);
    const target = new Set(entry.pending ?? entry.sent ?? entry.mask);
    if (target.has(index)) target.delete(index);
    else target.add(index);
    entry.pending = target;
    this.emit(); // optimistic: checkbox flips immediately
    await this.flush(answerId);
  }

  /** Send the latest pending mask, one request in flight per answer. */
  private async flush(answerId: string): Promise<void> {
    const session = this.mustSession();
    const entry = this.audit(answerId);
    if (entry.inFlight || entry.pending === null) return;
    const mask = entry.pending;
    entry.pending = null;
    entry.sent = mask;
    entry.inFlight = true;
    try {
      const result = await this.api.audit(
        session.rank.session_id, answerId, [...mask].sort((a, b) => a - b));
      entry.mask = new Set(result.masked_evidence);
      entry.lastAudit = result;
      if (entry.history.length === 0) {
        entry.history.push({ score: result.old_score, maskSize: 0 });
      }
      entry.history.push({ score: result.new_score, maskSize: entry.mask.size });
    } catch (e) {
      // roll back the optimistic flip: drop anything not server-acked
      entry.pending = null;
      this.error = String(e);
    } finally {
      entry.sent = null;
      entry.inFlight = false;
    }
    this.emit();
    if (entry.pending !== null) {
      await this.flush(answerId); // coalesced toggles queued meanwhile
    } else if (this.error === null) {
      await this.refreshSelectedExplanation(answerId);
    }
  }

  private async refreshSelectedExplanation(answerId: string): Promise<void> {
    const session = this.session;
    if (session && session.selectedAnswer === answerId) {
      await this.refreshExplanation();
    }
  }

  /** Mask shown in the UI: server truth plus any optimistic pending flips. */
  effectiveMask(answerId: string): Set<number> {
    const entry = this.session?.audits.get(answerId);
    if (!entry) return new Set();
    return entry.pending ?? entry.sent ?? entry.mask;
  }

  displayedScore(answerId: string): number {
    const session = this.mustSession();
    const entry = session.audits.get(answerId);
    if (entry && entry.lastAudit) return entry.lastAudit.new_score;
    const row = session.rank.answers.find((a) => a.answer_id === answerId);
    if (!row) throw new Error(`answer ${answerId} not in ranking`);
    return row.prob;
  }

  private mustSession(): UiSession {
    if (!this.session) throw new Error("no active session");
    return this.session;
  }
}
