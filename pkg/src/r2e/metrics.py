"""Ranking metrics, AUROC with DeLong comparison, relative success with Katz
intervals, and the frequency / mean-cosine baselines."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .evidence_index import AnswerPartitionIndex
from .ranking import RankedAnswerList, rank_by_score


class MetricsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# ranking metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RankingMetrics:
    mrr: float
    mr: float
    hits: dict[int, float]
    mode: str
    n_queries: int

    def __post_init__(self):
        if not 0.0 < self.mrr <= 1.0:
            raise MetricsError("MRR outside (0, 1]")
        if self.mr < 1.0:
            raise MetricsError("mean rank below 1")
        cuts = sorted(self.hits)
        if any(self.hits[a] > self.hits[b] for a, b in zip(cuts, cuts[1:])):
            raise MetricsError("hits must be monotone in the cutoff")


def _gold_rank(ranking, gold: str) -> int:
    if isinstance(ranking, RankedAnswerList):
        return ranking.rank_of(gold)
    try:
        return list(ranking).index(gold) + 1
    except ValueError:
        raise MetricsError(f"gold answer {gold!r} missing from ranking") from None


def ranking_metrics(rankings, golds, mode: str = "micro",
                    cutoffs: tuple[int, ...] = (10, 200)) -> RankingMetrics:
    """micro: average over queries; macro: per-gold-answer means, then averaged."""
    if len(rankings) != len(golds) or not golds:
        raise MetricsError("need one gold answer per ranking")
    ranks = np.array([_gold_rank(r, g) for r, g in zip(rankings, golds)], dtype=float)
    if mode == "micro":
        groups = [ranks]
    elif mode == "macro":
        by_answer = defaultdict(list)
        for rank, gold in zip(ranks, golds):
            by_answer[gold].append(rank)
        groups = [np.array(v) for _, v in sorted(by_answer.items())]
    else:
        raise MetricsError(f"unknown aggregation mode {mode!r}")
    mrr = float(np.mean([np.mean(1.0 / g) for g in groups]))
    mr = float(np.mean([np.mean(g) for g in groups]))
    hits = {c: float(np.mean([np.mean(g <= c) for g in groups])) for c in cutoffs}
    return RankingMetrics(mrr, mr, hits, mode, len(golds))


def reciprocal_ranks(rankings, golds) -> np.ndarray:
    return np.array([1.0 / _gold_rank(r, g) for r, g in zip(rankings, golds)])


def paired_bootstrap_pvalue(a: np.ndarray, b: np.ndarray, n_resamples: int = 1000,
                            seed: int = 0) -> float:
    """One-sided p for mean(a) > mean(b) under paired resampling of queries."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise MetricsError("paired bootstrap needs aligned samples")
    rng = np.random.default_rng(seed)
    n = len(a)
    idx = rng.integers(0, n, size=(n_resamples, n))
    deltas = (a[idx] - b[idx]).mean(axis=1)
    return float((deltas <= 0.0).mean())


# ---------------------------------------------------------------------------
# AUROC + DeLong
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinaryEvalSet:
    queries: tuple[str, ...]
    answer_ids: tuple[str, ...]
    labels: np.ndarray
    scores: np.ndarray
    years: tuple[int | None, ...] = ()

    def __post_init__(self):
        if not set(np.unique(self.labels)) <= {0, 1}:
            raise MetricsError("labels must be binary")
        if not np.isfinite(self.scores).all():
            raise MetricsError("scores must be finite")


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    z = x[order]
    n = len(x)
    ranks = np.zeros(n)
    i = 0
    while i < n:
        j = i
        while j < n and z[j] == z[i]:
            j += 1
        ranks[i:j] = 0.5 * (i + j - 1) + 1
        i = j
    out = np.empty(n)
    out[order] = ranks
    return out


def auroc(labels, scores) -> float:
    """Mann-Whitney statistic with ties counted 1/2."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    m = int((labels == 1).sum())
    n = int((labels == 0).sum())
    if m == 0 or n == 0:
        raise MetricsError("AUROC needs both classes present")
    ranks = _midranks(scores)
    return float((ranks[labels == 1].sum() - m * (m + 1) / 2) / (m * n))


@dataclass(frozen=True)
class DelongResult:
    auroc_a: float
    auroc_b: float
    delta: float
    variance: float
    p_value: float


def delong_compare(labels, scores_a, scores_b) -> DelongResult:
    """Two-sided DeLong test for two correlated AUROCs on the same examples.

    DeLong, DeLong & Clarke-Pearson (1988): variance from the covariance of
    per-example structural components, not the sum of the two variances.
    """
    labels = np.asarray(labels)
    scores_a = np.asarray(scores_a, dtype=float)
    scores_b = np.asarray(scores_b, dtype=float)
    if not (len(labels) == len(scores_a) == len(scores_b)):
        raise MetricsError("DeLong needs paired scores on identical examples")
    pos, neg = labels == 1, labels == 0
    m, n = int(pos.sum()), int(neg.sum())
    if m == 0 or n == 0:
        raise MetricsError("DeLong needs both classes present")

    v_pos = np.zeros((2, m))
    v_neg = np.zeros((2, n))
    aucs = np.zeros(2)
    for r, scores in enumerate((scores_a, scores_b)):
        x, y = scores[pos], scores[neg]
        tx, ty = _midranks(x), _midranks(y)
        tz = _midranks(np.concatenate([x, y]))
        aucs[r] = (tz[:m].sum() - m * (m + 1) / 2) / (m * n)
        v_pos[r] = (tz[:m] - tx) / n
        v_neg[r] = 1.0 - (tz[m:] - ty) / m

    s = np.cov(v_pos, ddof=1) / m + np.cov(v_neg, ddof=1) / n
    delta = float(aucs[0] - aucs[1])
    variance = float(s[0, 0] + s[1, 1] - 2 * s[0, 1])
    if variance <= 0.0 or delta == 0.0:
        p = 1.0 if delta == 0.0 else 0.0
    else:
        z = abs(delta) / math.sqrt(variance)
        p = 2.0 * (1.0 - _norm_cdf(z))
    return DelongResult(float(aucs[0]), float(aucs[1]), delta, variance, p)


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# relative success
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContingencySummary:
    """Counts for relative success: successes among predicted positives over
    successes among predicted negatives, rate-normalized."""

    tp: int
    pred_pos: int
    neg_successes: int
    pred_neg: int

    def __post_init__(self):
        if min(self.tp, self.pred_pos, self.neg_successes, self.pred_neg) < 0:
            raise MetricsError("negative contingency count")
        if self.tp > self.pred_pos or self.neg_successes > self.pred_neg:
            raise MetricsError("successes exceed group size")

    @property
    def rs(self) -> float:
        if self.pred_pos == 0 or self.pred_neg == 0:
            raise MetricsError("relative success needs both predicted groups")
        if self.neg_successes == 0:
            return math.inf
        return (self.tp / self.pred_pos) / (self.neg_successes / self.pred_neg)

    @property
    def ci_defined(self) -> bool:
        return self.tp > 0 and self.neg_successes > 0

    def log_se(self) -> float:
        """Katz (1978) log-scale standard error."""
        if not self.ci_defined:
            raise MetricsError("CI undefined with zero successes in a group")
        return math.sqrt(1 / self.tp - 1 / self.pred_pos
                         + 1 / self.neg_successes - 1 / self.pred_neg)


@dataclass(frozen=True)
class RelativeSuccess:
    rs: float
    ci_low: float | None
    ci_high: float | None
    summary: ContingencySummary

    @property
    def ci_defined(self) -> bool:
        return self.ci_low is not None


def contingency(labels, scores, threshold: float) -> ContingencySummary:
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    pred_pos = scores > threshold
    pp, pn = int(pred_pos.sum()), int((~pred_pos).sum())
    if pp == 0 or pn == 0:
        raise MetricsError(
            f"threshold {threshold} leaves an empty predicted group "
            f"(positives={pp}, negatives={pn})")
    tp = int((labels[pred_pos] == 1).sum())
    sn = int((labels[~pred_pos] == 1).sum())
    return ContingencySummary(tp, pp, sn, pn)


def relative_success(labels, scores, threshold: float) -> RelativeSuccess:
    summary = contingency(labels, scores, threshold)
    rs = summary.rs
    if not summary.ci_defined:
        return RelativeSuccess(rs, None, None, summary)
    se = summary.log_se()
    return RelativeSuccess(rs, math.exp(math.log(rs) - 1.96 * se),
                           math.exp(math.log(rs) + 1.96 * se), summary)


def rs_ztest(a: ContingencySummary, b: ContingencySummary) -> float:
    """Two-sided Z on the log relative-success difference, Katz variances."""
    z_num = math.log(a.rs) - math.log(b.rs)
    denom = math.sqrt(a.log_se() ** 2 + b.log_se() ** 2)
    if denom == 0.0:
        return 1.0 if z_num == 0.0 else 0.0
    return 2.0 * (1.0 - _norm_cdf(abs(z_num) / denom))


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def freq_baseline(counts: dict[str, float]) -> RankedAnswerList:
    """Answers scored by training-corpus frequency."""
    if not counts:
        raise MetricsError("empty count table")
    return rank_by_score({a: float(v) for a, v in counts.items()})


def mcs_baseline(query_emb: np.ndarray, index: AnswerPartitionIndex, k: int,
                 answer_ids=None, fixed_divisor: bool = True,
                 year_max: int | None = None) -> RankedAnswerList:
    """Mean cosine of the top-k evidence; short partitions contribute zeros
    unless fixed_divisor is disabled."""
    ids = list(answer_ids) if answer_ids is not None else index.answer_ids()
    scores = {}
    for answer_id in ids:
        hits = index.topk(answer_id, query_emb, k, year_max=year_max) \
            if answer_id in index else []
        total = sum(h.similarity for h in hits)
        if fixed_divisor:
            scores[answer_id] = total / k
        else:
            scores[answer_id] = total / len(hits) if hits else 0.0
    return rank_by_score(scores)


# ---------------------------------------------------------------------------
# eval-set file format
# ---------------------------------------------------------------------------

def read_eval_set(path) -> BinaryEvalSet:
    """CSV: query_text, answer_id, label[, score[, year]]."""
    queries, answers, labels, scores, years = [], [], [], [], []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if len(row) < 3:
                raise MetricsError(f"{path}:{lineno}: expected query,answer,label")
            queries.append(row[0])
            answers.append(row[1])
            try:
                labels.append(int(row[2]))
                scores.append(float(row[3]) if len(row) > 3 and row[3] != "" else math.nan)
                years.append(int(row[4]) if len(row) > 4 and row[4] != "" else None)
            except ValueError as e:
                raise MetricsError(f"{path}:{lineno}: {e}") from e
    score_arr = np.array(scores)
    if np.isnan(score_arr).all():
        score_arr = np.zeros(len(scores))
    elif np.isnan(score_arr).any():
        raise MetricsError(f"{path}: scores must be given for all rows or none")
    return BinaryEvalSet(tuple(queries), tuple(answers),
                         np.array(labels), score_arr, tuple(years))


def write_eval_set(path, evalset: BinaryEvalSet) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for i in range(len(evalset.queries)):
            year = evalset.years[i] if evalset.years else None
            writer.writerow([evalset.queries[i], evalset.answer_ids[i],
                             int(evalset.labels[i]), float(evalset.scores[i]),
                             "" if year is None else year])
