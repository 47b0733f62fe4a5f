"""Shapley-value attribution of a score onto its evidence features.

The value of any feature subset is the combiner's score with the remaining
slots replaced by the learned NULL feature. An exact subset-enumeration
oracle covers small k; the workhorse estimator samples permutations with
antithetical pairing (each sampled ordering followed by its reversal) and
averages marginal contributions with cumulative updates, so the estimates
plus the all-NULL baseline telescope to the full score at any sample count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .reasoner import Reasoner

SetFunction = Callable[[np.ndarray], np.ndarray]  # [B, k] bool -> [B] scores

LOGIT = "logit"
PROBABILITY = "probability"


class AttributionError(ValueError):
    pass


@dataclass(frozen=True)
class AttributionResult:
    shapley: np.ndarray  # length k
    baseline: float      # score with every slot NULL
    total: float         # score with every slot active
    output_space: str
    n_permutations: int | None = None  # None for the exact oracle
    bias_term: float | None = None

    @property
    def k(self) -> int:
        return len(self.shapley)

    @property
    def corrected_total(self) -> float:
        return self.total + (self.bias_term or 0.0)

    def efficiency_gap(self) -> float:
        return abs(float(self.shapley.sum()) + self.baseline - self.total)

    def to_payload(self) -> dict:
        return {
            "shapley": [float(v) for v in self.shapley],
            "baseline": self.baseline,
            "total": self.total,
            "output_space": self.output_space,
            "n_permutations": self.n_permutations,
            "bias_term": self.bias_term,
        }


def make_set_function(model: Reasoner, features: np.ndarray,
                      output_space: str = LOGIT,
                      batch_size: int = 256) -> SetFunction:
    """Mask-indexed view of the combiner over one feature matrix [k, h]."""
    if output_space not in (LOGIT, PROBABILITY):
        raise AttributionError(f"unknown output space {output_space!r}")
    features = np.asarray(features, dtype=model.params.dtype)
    null_row = model.null_vector

    def g(masks: np.ndarray) -> np.ndarray:
        masks = np.atleast_2d(np.asarray(masks, dtype=bool))
        out = np.empty(masks.shape[0])
        for start in range(0, masks.shape[0], batch_size):
            chunk = masks[start:start + batch_size]
            batch = np.where(chunk[:, :, None], features[None, :, :], null_row)
            out[start:start + len(chunk)] = model.combine_batch(batch)
        if output_space == PROBABILITY:
            out = 1.0 / (1.0 + np.exp(-out))
        return out

    return g


def shapley_exact(g: SetFunction, k: int, output_space: str = LOGIT
                  ) -> AttributionResult:
    """Exact enumeration over all 2^k subsets (memoized per bitmask); k <= 12."""
    if k > 12:
        raise AttributionError(f"exact enumeration infeasible for k={k}")
    masks = np.zeros((2 ** k, k), dtype=bool)
    for s in range(2 ** k):
        for i in range(k):
            masks[s, i] = (s >> i) & 1
    values = g(masks)

    fact = [math.factorial(i) for i in range(k + 1)]
    phis = np.zeros(k)
    for s in range(2 ** k):
        size = int(bin(s).count("1"))
        weight = fact[size] * fact[k - 1 - size] / fact[k]
        for i in range(k):
            if not (s >> i) & 1:
                phis[i] += weight * (values[s | (1 << i)] - values[s])
    return AttributionResult(phis, float(values[0]), float(values[-1]),
                             output_space)


@dataclass(frozen=True)
class PermutationPlan:
    """2M orderings; when antithetical, ordering M+i is the reversal of i."""

    seed: int
    m: int
    orderings: np.ndarray  # [2M, k] int
    antithetical: bool = True

    def __post_init__(self):
        if self.antithetical:
            first, second = self.orderings[:self.m], self.orderings[self.m:]
            if not (second == first[:, ::-1]).all():
                raise AttributionError("second half must reverse the first half")


def permutation_plan(k: int, m: int, seed: int,
                     antithetical: bool = True) -> PermutationPlan:
    if m < 1:
        raise AttributionError("need at least one permutation")
    rng = np.random.default_rng(seed)
    if antithetical:
        first = np.stack([rng.permutation(k) for _ in range(m)])
        orderings = np.concatenate([first, first[:, ::-1]])
    else:
        orderings = np.stack([rng.permutation(k) for _ in range(2 * m)])
    return PermutationPlan(seed, m, orderings, antithetical)


def shapley_permutation(g: SetFunction, k: int, m: int = 100, seed: int = 0,
                        output_space: str = LOGIT,
                        antithetical: bool = True) -> AttributionResult:
    """Permutation-sampled estimate; same 2M-evaluation budget either way."""
    plan = permutation_plan(k, m, seed, antithetical)
    phis = np.zeros(k)
    baseline = float(g(np.zeros((1, k), dtype=bool))[0])
    total = float(g(np.ones((1, k), dtype=bool))[0])
    prefix_masks = np.zeros((k, k), dtype=bool)
    for j, perm in enumerate(plan.orderings, start=1):
        prefix_masks[:] = False
        for i, f in enumerate(perm):
            prefix_masks[i:, f] = True
        values = g(prefix_masks)
        prev = baseline
        for i, f in enumerate(perm):
            marginal = values[i] - prev
            phis[f] = (j - 1) / j * phis[f] + marginal / j
            prev = values[i]
    return AttributionResult(phis, baseline, total, output_space,
                             n_permutations=m)


def attach_bias_feature(result: AttributionResult, f_c: float) -> AttributionResult:
    """Append the frequency correction as a constant additive attribution."""
    if result.output_space != LOGIT:
        raise AttributionError(
            "bias correction is additive only in logit space")
    return replace(result, bias_term=float(f_c))


def convergence_report(g: SetFunction, k: int, m_grid: list[int], trials: int,
                       seed: int = 0) -> list[dict]:
    """Mean absolute deviation from the exact oracle per permutation budget."""
    exact = shapley_exact(g, k)
    rows = []
    for m in m_grid:
        errors = []
        for t in range(trials):
            est = shapley_permutation(g, k, m=m, seed=seed * 1000 + 31 * m + t)
            errors.append(float(np.abs(est.shapley - exact.shapley).mean()))
        rows.append({"m": m, "mean_abs_error": float(np.mean(errors)),
                     "trials": trials})
    return rows
