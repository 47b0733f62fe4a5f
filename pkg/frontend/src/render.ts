// DOM rendering. Pure functions of store state: no score arithmetic beyond
// presentation scaling (bars are normalized to the largest |attribution|).

import { EvidenceAttribution } from "./api.js";
import { AuditStore, ScorePoint } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

const fmt = (x: number, digits = 4) => x.toFixed(digits);

export function renderRanking(container: HTMLElement, store: AuditStore): void {
  container.replaceChildren();
  const session = store.session;
  if (!session) return;
  const table = el("table", "ranking");
  const head = el("tr");
  for (const col of ["rank", "answer", "prob", "logit", "bias f_c", "corrected"]) {
    head.appendChild(el("th", undefined, col));
  }
  table.appendChild(head);
  const ordered = [...session.rank.answers].sort((a, b) => a.rank - b.rank);
  for (const row of ordered) {
    const tr = el("tr", row.answer_id === session.selectedAnswer ? "selected" : "");
    tr.dataset.answer = row.answer_id;
    tr.appendChild(el("td", undefined, String(row.rank)));
    tr.appendChild(el("td", "answer-id", row.answer_id));
    tr.appendChild(el("td", "score", fmt(store.displayedScore(row.answer_id))));
    tr.appendChild(el("td", undefined, fmt(row.logit)));
    tr.appendChild(el("td", undefined, fmt(row.f_c)));
    tr.appendChild(el("td", undefined, fmt(row.corrected_logit)));
    tr.addEventListener("click", () => void store.selectAnswer(row.answer_id));
    table.appendChild(tr);
  }
  container.appendChild(table);
}

function bar(value: number, maxAbs: number, label: string,
             kind: "evidence" | "bias"): HTMLElement {
  const wrap = el("div", `bar-row ${kind}`);
  const scaled = maxAbs > 0 ? Math.abs(value) / maxAbs : 0;
  const fill = el("div", `bar ${value >= 0 ? "pos" : "neg"}`);
  fill.style.width = `${Math.max(1, Math.round(scaled * 100))}%`;
  fill.title = label;
  wrap.appendChild(fill);
  wrap.appendChild(el("span", "bar-value", fmt(value)));
  return wrap;
}

export type SortKey = "shapley" | "similarity";

export function renderEvidence(container: HTMLElement, store: AuditStore,
                               sortBy: SortKey = "shapley"): void {
  container.replaceChildren();
  const session = store.session;
  if (!session || !session.selectedAnswer) return;
  const answerId = session.selectedAnswer;
  const explain = session.explain;
  const header = el("div", "evidence-header");
  header.appendChild(el("h3", undefined, `evidence for ${answerId}`));
  const scoreBadge = el("span", "score-badge",
                        `score ${fmt(store.displayedScore(answerId))}`);
  scoreBadge.id = "current-score";
  header.appendChild(scoreBadge);
  const entry = session.audits.get(answerId);
  if (entry && entry.lastAudit) {
    const d = entry.lastAudit.delta;
    const badge = el("span", `delta-badge ${d >= 0 ? "up" : "down"}`,
                     `${d >= 0 ? "+" : ""}${fmt(d)}`);
    badge.id = "delta-badge";
    header.appendChild(badge);
  }
  container.appendChild(header);
  if (entry && entry.history.length > 1) {
    container.appendChild(sparkline(entry.history));
  }
  if (!explain) {
    container.appendChild(el("p", "empty", "loading attribution..."));
    return;
  }
  if (explain.evidence.length === 0) {
    container.appendChild(el(
      "p", "empty",
      `no evidence retrieved; baseline-only score ${fmt(explain.baseline)}`));
    return;
  }

  const totals = el("p", "totals",
                    `baseline ${fmt(explain.baseline)} + evidence = total ` +
                    `${fmt(explain.total)} (${explain.output_space})`);
  totals.id = "attribution-totals";
  container.appendChild(totals);

  const rows = [...explain.evidence];
  rows.sort(sortBy === "shapley"
    ? (a, b) => b.shapley - a.shapley
    : (a, b) => b.similarity - a.similarity);
  const maxAbs = Math.max(
    ...explain.evidence.map((e) => Math.abs(e.shapley)),
    explain.bias_term !== null ? Math.abs(explain.bias_term) : 0);

  const list = el("div", "evidence-list");
  const mask = store.effectiveMask(answerId);
  for (const row of rows) {
    list.appendChild(evidenceRow(row, maxAbs, mask.has(row.index), store, answerId));
  }
  container.appendChild(list);

  if (explain.bias_term !== null) {
    const biasRow = el("div", "evidence-row bias-row");
    biasRow.id = "bias-feature";
    biasRow.appendChild(el("span", "text", "frequency correction (additive)"));
    biasRow.appendChild(bar(explain.bias_term, maxAbs, "bias", "bias"));
    container.appendChild(biasRow);
  }
}

function evidenceRow(row: EvidenceAttribution, maxAbs: number, masked: boolean,
                     store: AuditStore, answerId: string): HTMLElement {
  const wrap = el("div", `evidence-row${masked ? " masked" : ""}`);
  wrap.dataset.index = String(row.index);
  const toggle = el("input") as HTMLInputElement;
  toggle.type = "checkbox";
  toggle.checked = masked;
  toggle.title = "mark irrelevant";
  toggle.addEventListener("change",
    () => void store.toggleEvidence(answerId, row.index));
  wrap.appendChild(toggle);
  const body = el("div", "evidence-body");
  body.appendChild(el("span", "text", row.text));
  body.appendChild(el("span", "meta",
                      `${row.doc_id} (${row.year})${row.source ? " " + row.source : ""}` +
                      ` cos ${fmt(row.similarity, 3)}`));
  wrap.appendChild(body);
  wrap.appendChild(bar(row.shapley, maxAbs, row.passage_id, "evidence"));
  return wrap;
}

function sparkline(history: ScorePoint[]): HTMLElement {
  const w = 120, h = 28, pad = 2;
  const xs = history.map((_, i) => pad + (i * (w - 2 * pad)) / Math.max(1, history.length - 1));
  const ys = history.map((p) => h - pad - p.score * (h - 2 * pad));
  const points = xs.map((x, i) => `${x.toFixed(1)},${ys[i].toFixed(1)}`).join(" ");
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("width", String(w));
  svg.setAttribute("height", String(h));
  svg.setAttribute("class", "sparkline");
  const line = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
  line.setAttribute("points", points);
  line.setAttribute("fill", "none");
  const holder = el("div", "history");
  holder.appendChild(svg);
  svg.appendChild(line);
  holder.title = history.map((p) => fmt(p.score)).join(" -> ");
  return holder;
}

export function renderError(container: HTMLElement, store: AuditStore): void {
  container.replaceChildren();
  if (store.error) {
    container.appendChild(el("div", "error", store.error));
  }
}
