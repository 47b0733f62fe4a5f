// Typed client for the ranking/explanation/audit service. Every number the
// UI displays originates from one of these payloads.

export interface AnswerScore {
  answer_id: string;
  logit: number;
  prob: number;
  f_c: number;
  corrected_logit: number;
  rank: number;
}

export interface RankResponse {
  session_id: string;
  query: string;
  k: number;
  c: number;
  ordering: "corrected" | "raw";
  answers: AnswerScore[];
}

export interface EvidenceAttribution {
  index: number;
  passage_id: string;
  text: string;
  doc_id: string;
  year: number;
  source: string;
  similarity: number;
  shapley: number;
}

export interface ExplainResponse {
  answer_id: string;
  baseline: number;
  total: number;
  output_space: "logit" | "probability";
  bias_term: number | null;
  n_permutations: number | null;
  evidence: EvidenceAttribution[];
}

export interface AuditResponse {
  answer_id: string;
  masked_evidence: number[];
  old_score: number;
  new_score: number;
  delta: number;
}

export interface StatsResponse {
  answers: Record<string, number>;
  splits: Record<string, number>;
  index_checksum: string;
  n_passages: number;
  answer_set_size: number;
}

export interface ErrorBody {
  code: string;
  message: string;
}

export class ServiceError extends Error {
  constructor(public status: number, public body: ErrorBody) {
    super(`${body.code}: ${body.message}`);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(base + path, {
    headers: { "Content-Type": "application/json" },
    ...init,
  });
  const data = await response.json();
  if (!response.ok) {
    const body = (data && data.code) ? data as ErrorBody
      : { code: "error", message: JSON.stringify(data) };
    throw new ServiceError(response.status, body);
  }
  return data as T;
}

export class ApiClient {
  constructor(public baseUrl: string = "") {}

  rank(query: string, k?: number, c?: number, topN?: number): Promise<RankResponse> {
    return request<RankResponse>(this.baseUrl, "/rank", {
      method: "POST",
      body: JSON.stringify({ query, k: k ?? null, c: c ?? null, top_n: topN ?? null }),
    });
  }

  explain(session: string, answerId: string, outputSpace: "logit" | "probability",
          seed = 0): Promise<ExplainResponse> {
    return request<ExplainResponse>(this.baseUrl, "/explain", {
      method: "POST",
      body: JSON.stringify({
        session, answer_id: answerId, output_space: outputSpace, seed,
      }),
    });
  }

  audit(session: string, answerId: string, maskedEvidence: number[]): Promise<AuditResponse> {
    return request<AuditResponse>(this.baseUrl, "/audit", {
      method: "POST",
      body: JSON.stringify({
        session, answer_id: answerId, masked_evidence: maskedEvidence,
      }),
    });
  }

  stats(): Promise<StatsResponse> {
    return request<StatsResponse>(this.baseUrl, "/corpus/stats", { method: "GET" });
  }
}
