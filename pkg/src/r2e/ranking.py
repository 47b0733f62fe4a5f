"""Ranked answer lists shared by the scorer, baselines, and the service."""

from __future__ import annotations

import json
from dataclasses import dataclass


@dataclass(frozen=True)
class ScoredAnswer:
    answer_id: str
    logit: float
    prob: float | None
    f_c: float
    corrected_logit: float
    rank: int


@dataclass(frozen=True)
class RankedAnswerList:
    entries: tuple[ScoredAnswer, ...]
    c: float
    ordering: str  # "corrected" when c > 0, else "raw"

    def __post_init__(self):
        ranks = sorted(e.rank for e in self.entries)
        if ranks != list(range(1, len(self.entries) + 1)):
            raise ValueError("ranks must be a permutation of 1..N")

    def ordered_ids(self) -> list[str]:
        return [e.answer_id for e in sorted(self.entries, key=lambda e: e.rank)]

    def rank_of(self, answer_id: str) -> int:
        for e in self.entries:
            if e.answer_id == answer_id:
                return e.rank
        raise KeyError(answer_id)

    def entry(self, answer_id: str) -> ScoredAnswer:
        for e in self.entries:
            if e.answer_id == answer_id:
                return e
        raise KeyError(answer_id)


def rank_by_score(scores: dict[str, float], *, c: float = 0.0,
                  f_c: dict[str, float] | None = None,
                  probs: dict[str, float] | None = None) -> RankedAnswerList:
    """Order by corrected score descending, ties by ascending answer id."""
    f_c = f_c or {a: 0.0 for a in scores}
    corrected = {a: scores[a] + f_c[a] for a in scores}
    order = sorted(scores, key=lambda a: (-corrected[a], a))
    entries = tuple(
        ScoredAnswer(
            answer_id=a,
            logit=float(scores[a]),
            prob=None if probs is None else float(probs[a]),
            f_c=float(f_c[a]),
            corrected_logit=float(corrected[a]),
            rank=i + 1,
        )
        for i, a in enumerate(order)
    )
    return RankedAnswerList(entries, c=c, ordering="corrected" if c > 0 else "raw")


def write_ranking_jsonl(path, ranking: RankedAnswerList) -> None:
    with open(path, "w") as f:
        for e in sorted(ranking.entries, key=lambda e: e.rank):
            f.write(json.dumps({
                "answer_id": e.answer_id,
                "logit": e.logit,
                "prob": e.prob,
                "f_c": e.f_c,
                "corrected_logit": e.corrected_logit,
                "rank": e.rank,
            }) + "\n")
