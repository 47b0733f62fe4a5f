"""Shapley attribution: axioms, estimator vs exact oracle, bias feature."""

import math

import numpy as np
import pytest
from scipy import stats

from r2e import attribution as A
from r2e import reasoner as R


def additive_g(values):
    v = np.asarray(values, dtype=float)

    def g(masks):
        masks = np.atleast_2d(masks)
        return masks @ v

    return g


def or_g(masks):
    masks = np.atleast_2d(masks)
    return masks.any(axis=1).astype(float)


def quadratic_g(weights):
    w = np.asarray(weights, dtype=float)

    def g(masks):
        masks = np.atleast_2d(masks).astype(float)
        s = masks @ w
        return s * s

    return g


class TestExact:
    def test_additive_model_recovers_values(self):
        res = A.shapley_exact(additive_g([0.2, 0.3]), k=2)
        np.testing.assert_allclose(res.shapley, [0.2, 0.3], atol=1e-12)
        assert res.baseline == 0.0
        assert res.total == pytest.approx(0.5, abs=1e-12)

    def test_or_model_splits_evenly(self):
        res = A.shapley_exact(or_g, k=2)
        np.testing.assert_allclose(res.shapley, [0.5, 0.5], atol=1e-12)

    def test_null_player_gets_zero(self, small_combiner):
        model, feats = small_combiner
        feats = feats.copy()
        feats[1] = model.null_vector
        g = A.make_set_function(model, feats)
        res = A.shapley_exact(g, k=feats.shape[0])
        assert abs(res.shapley[1]) < 1e-9

    def test_symmetry_identical_features(self, small_combiner):
        model, feats = small_combiner
        feats = feats.copy()
        feats[2] = feats[0]
        g = A.make_set_function(model, feats)
        res = A.shapley_exact(g, k=feats.shape[0])
        assert abs(res.shapley[0] - res.shapley[2]) < 1e-9

    def test_too_many_features_rejected(self):
        with pytest.raises(A.AttributionError):
            A.shapley_exact(or_g, k=13)

    def test_efficiency(self, small_combiner):
        model, feats = small_combiner
        g = A.make_set_function(model, feats)
        res = A.shapley_exact(g, k=feats.shape[0])
        assert res.efficiency_gap() < 1e-9


@pytest.fixture(scope="module")
def small_combiner():
    config = R.ReasonerConfig(hidden=8, k=4, heads=2, inducing_points=4,
                              encoder_blocks=1, decoder_blocks=1)
    model = R.Reasoner(config, R.init_reasoner_params(config, seed=21))
    feats = np.random.default_rng(3).normal(size=(4, 8))
    return model, feats


class TestPermutationPlan:
    def test_antithetical_halves_are_reversals(self):
        plan = A.permutation_plan(k=6, m=10, seed=4)
        assert plan.orderings.shape == (20, 6)
        np.testing.assert_array_equal(plan.orderings[10:], plan.orderings[:10, ::-1])

    def test_plain_plan_same_budget(self):
        plan = A.permutation_plan(k=5, m=7, seed=0, antithetical=False)
        assert plan.orderings.shape == (14, 5)

    def test_zero_permutations_rejected(self):
        with pytest.raises(A.AttributionError):
            A.permutation_plan(k=3, m=0, seed=0)


class TestPermutationEstimator:
    def test_additive_model_exact_for_any_m(self):
        g = additive_g([0.4, -0.2, 1.0])
        for m in (1, 3, 10):
            res = A.shapley_permutation(g, k=3, m=m, seed=m)
            np.testing.assert_allclose(res.shapley, [0.4, -0.2, 1.0], atol=1e-12)

    def test_or_model_close_to_exact_at_m100(self):
        res = A.shapley_permutation(or_g, k=2, m=100, seed=0)
        assert abs(res.shapley[0] - 0.5) < 0.05
        assert abs(res.shapley[1] - 0.5) < 0.05

    def test_efficiency_for_every_m_and_seed(self, small_combiner):
        model, feats = small_combiner
        g = A.make_set_function(model, feats)
        for m in (1, 2, 5, 17):
            for seed in (0, 1, 2):
                res = A.shapley_permutation(g, k=4, m=m, seed=seed)
                assert res.efficiency_gap() < 1e-6

    def test_probability_space_supported(self, small_combiner):
        model, feats = small_combiner
        g = A.make_set_function(model, feats, output_space=A.PROBABILITY)
        res = A.shapley_permutation(g, k=4, m=5, seed=0,
                                    output_space=A.PROBABILITY)
        assert 0.0 < res.baseline < 1.0 and 0.0 < res.total < 1.0
        assert res.efficiency_gap() < 1e-6

    def test_deterministic_given_seed(self, small_combiner):
        model, feats = small_combiner
        g = A.make_set_function(model, feats)
        a = A.shapley_permutation(g, k=4, m=7, seed=42)
        b = A.shapley_permutation(g, k=4, m=7, seed=42)
        np.testing.assert_array_equal(a.shapley, b.shapley)

    def test_matches_exact_on_reasoner(self, small_combiner):
        model, feats = small_combiner
        g = A.make_set_function(model, feats)
        exact = A.shapley_exact(g, k=4)
        est = A.shapley_permutation(g, k=4, m=100, seed=1)
        assert np.abs(est.shapley - exact.shapley).mean() < 0.05


class TestAntithetical:
    def test_variance_not_worse_on_quadratic_model(self):
        g = quadratic_g([1.0, -0.7, 0.4, 1.3])
        exact = A.shapley_exact(g, k=4)
        anti_err, plain_err = [], []
        for t in range(200):
            anti = A.shapley_permutation(g, k=4, m=4, seed=t, antithetical=True)
            plain = A.shapley_permutation(g, k=4, m=4, seed=t, antithetical=False)
            anti_err.append(((anti.shapley - exact.shapley) ** 2).mean())
            plain_err.append(((plain.shapley - exact.shapley) ** 2).mean())
        assert np.mean(anti_err) <= np.mean(plain_err)
        test = stats.wilcoxon(anti_err, plain_err, alternative="less")
        assert test.pvalue < 0.05


class TestBiasFeature:
    def _result(self):
        return A.shapley_exact(additive_g([0.2, 0.3]), k=2)

    def test_zero_correction_keeps_totals(self):
        res = A.attach_bias_feature(self._result(), 0.0)
        assert res.bias_term == 0.0
        assert res.corrected_total == res.total

    def test_worked_low_count_correction(self):
        f_c = math.log(0.5) - math.log(0.2)  # counts (8, 2), c=1, low-count side
        res = A.attach_bias_feature(self._result(), f_c)
        assert res.corrected_total == pytest.approx(res.total + 0.916, abs=1e-3)

    def test_efficiency_after_attachment(self):
        res = A.attach_bias_feature(self._result(), 0.37)
        gap = abs(float(res.shapley.sum()) + res.baseline + res.bias_term
                  - res.corrected_total)
        assert gap < 1e-6

    def test_probability_space_rejected(self):
        res = A.shapley_exact(additive_g([0.1]), k=1, output_space=A.PROBABILITY)
        with pytest.raises(A.AttributionError):
            A.attach_bias_feature(res, 0.1)


def test_estimator_consistency_at_m1000():
    """At M=1000 the estimate sits within 0.01 of exact on 8-feature models
    (logit outputs scaled to unit range)."""
    for seed in (0, 1):
        config = R.ReasonerConfig(hidden=8, k=8, heads=2, inducing_points=4,
                                  encoder_blocks=1, decoder_blocks=1)
        model = R.Reasoner(config, R.init_reasoner_params(config, seed=seed))
        feats = np.random.default_rng(seed).normal(size=(8, 8))
        raw = A.make_set_function(model, feats)
        span = float(np.ptp(raw(np.unpackbits(
            np.arange(256, dtype=np.uint8)[:, None], axis=1, count=8).astype(bool))))

        def g(masks, _raw=raw, _span=span):
            return _raw(masks) / _span

        exact = A.shapley_exact(g, k=8)
        est = A.shapley_permutation(g, k=8, m=1000, seed=seed + 7)
        assert np.abs(est.shapley - exact.shapley).mean() < 0.01


class TestConvergenceReport:
    def test_additive_error_zero_everywhere(self):
        rows = A.convergence_report(additive_g([0.5, -0.1, 0.2]), k=3,
                                    m_grid=[1, 5], trials=3)
        assert all(r["mean_abs_error"] < 1e-12 for r in rows)

    def test_error_decreases_with_m_on_reasoner(self):
        config = R.ReasonerConfig(hidden=8, k=8, heads=2, inducing_points=4,
                                  encoder_blocks=1, decoder_blocks=1)
        model = R.Reasoner(config, R.init_reasoner_params(config, seed=5))
        feats = np.random.default_rng(6).normal(size=(8, 8))
        g = A.make_set_function(model, feats)
        rows = A.convergence_report(g, k=8, m_grid=[1, 10, 100], trials=20, seed=2)
        errs = [r["mean_abs_error"] for r in rows]
        assert errs[0] > errs[1] > errs[2]
