"""Scorer: pair fusion oracle, set-combiner invariance, training, correction."""

import math

import numpy as np
import pytest
from scipy.special import erf
from scipy.stats import chisquare

from r2e import diffkernel as dk
from r2e import reasoner as R
from r2e.corpus import tokenize


def _gelu(x):
    return x * 0.5 * (1.0 + erf(x / np.sqrt(2.0)))


def _ln(x, gain, shift, eps=1e-5):
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return (x - mu) / np.sqrt(var + eps) * gain + shift


def _ln_rows(x, gain, shift, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + shift


def scripted_pair_conv(arrays, q, e):
    """Independent numpy oracle for the conv pair encoder (one pair)."""
    x = np.stack([q, e])  # [2, h]
    x = _ln(x, arrays["pair.ln.gain"], arrays["pair.ln.shift"])
    x = arrays["pair.conv1.w"] @ x + arrays["pair.conv1.b"]
    x = _gelu(x)
    x = arrays["pair.conv2.w"] @ x + arrays["pair.conv2.b"]
    return x[0]


def scripted_combine(arrays, config, feats):
    """Independent numpy oracle for the set combiner (one feature set [k, h])."""
    heads, h = config.heads, config.hidden
    dh = h // heads

    def mha(prefix, xq, xkv):
        q = xq @ arrays[f"{prefix}.wq"] + arrays[f"{prefix}.wq_b"]
        k = xkv @ arrays[f"{prefix}.wk"]
        v = xkv @ arrays[f"{prefix}.wv"] + arrays[f"{prefix}.wv_b"]
        out = np.zeros((xq.shape[0], h))
        for hd in range(heads):
            sl = slice(hd * dh, (hd + 1) * dh)
            scores = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
            w = np.exp(scores - scores.max(-1, keepdims=True))
            w /= w.sum(-1, keepdims=True)
            out[:, sl] = w @ v[:, sl]
        return out @ arrays[f"{prefix}.wo"] + arrays[f"{prefix}.wo_b"]

    def mab(prefix, x, y):
        h1 = _ln_rows(x + mha(f"{prefix}.attn", x, y),
                      arrays[f"{prefix}.ln1.gain"], arrays[f"{prefix}.ln1.shift"])
        ff = _gelu(h1 @ arrays[f"{prefix}.rff.w"] + arrays[f"{prefix}.rff.b"])
        return _ln_rows(h1 + ff,
                        arrays[f"{prefix}.ln2.gain"], arrays[f"{prefix}.ln2.shift"])

    x = feats
    for i in range(config.encoder_blocks):
        induced = mab(f"enc{i}.mab0", arrays[f"enc{i}.inducing"][0], x)
        x = mab(f"enc{i}.mab1", x, induced)
    z = _gelu(x @ arrays["pma.rff.w"] + arrays["pma.rff.b"])
    pooled = mab("pma.mab", arrays["pma.seed"][0], z)
    for j in range(config.decoder_blocks):
        pooled = mab(f"dec{j}.mab", pooled, pooled)
    return float((pooled @ arrays["out.w"] + arrays["out.b"])[0, 0])


@pytest.fixture(scope="module")
def small_reasoner():
    config = R.ReasonerConfig(hidden=8, k=3, heads=2, inducing_points=4,
                              encoder_blocks=2, decoder_blocks=2)
    params = R.init_reasoner_params(config, seed=9)
    return R.Reasoner(config, params)


class TestPairEncoder:
    def test_conv_zero_weights_zero_output(self):
        config = R.ReasonerConfig(hidden=6, k=2, heads=2, inducing_points=2)
        params = R.init_reasoner_params(config, seed=0)
        for name in ("pair.conv1.w", "pair.conv1.b", "pair.conv2.w", "pair.conv2.b"):
            params[name].data[:] = 0.0
        model = R.Reasoner(config, params)
        rng = np.random.default_rng(1)
        out = model.pair_features(rng.normal(size=6), rng.normal(size=(4, 6)))
        np.testing.assert_array_equal(out, np.zeros((4, 6)))

    def test_hadamard_all_ones_evidence_returns_query(self):
        config = R.ReasonerConfig(hidden=6, k=2, heads=2, inducing_points=2,
                                  pair_encoder="hadamard")
        model = R.Reasoner(config, R.init_reasoner_params(config, seed=0))
        q = np.random.default_rng(2).normal(size=6)
        q /= np.linalg.norm(q)
        out = model.pair_features(q, np.ones((1, 6)))
        np.testing.assert_allclose(out[0], q, atol=1e-12)

    def test_conv_matches_scripted_oracle(self, small_reasoner):
        rng = np.random.default_rng(3)
        q = rng.normal(size=8)
        e = rng.normal(size=(5, 8))
        got = small_reasoner.pair_features(q, e)
        arrays = small_reasoner.params.to_arrays()
        for i in range(5):
            np.testing.assert_allclose(got[i], scripted_pair_conv(arrays, q, e[i]),
                                       atol=1e-12)

    def test_width_mismatch_rejected(self, small_reasoner):
        with pytest.raises(R.ReasonerError):
            small_reasoner.pair_features(np.zeros(5), np.zeros((2, 5)))


class TestCombine:
    def test_matches_scripted_oracle(self, small_reasoner):
        rng = np.random.default_rng(4)
        feats = rng.normal(size=(3, 8))
        got = small_reasoner.combine_batch(feats[None])[0]
        want = scripted_combine(small_reasoner.params.to_arrays(),
                                small_reasoner.config, feats)
        assert got == pytest.approx(want, abs=1e-10)

    def test_permutation_invariance(self, small_reasoner):
        rng = np.random.default_rng(5)
        feats = rng.normal(size=(6, 8))
        config = R.ReasonerConfig(hidden=8, k=6, heads=2, inducing_points=4)
        model = R.Reasoner(config, R.init_reasoner_params(config, seed=11))
        base = model.combine_batch(feats[None])[0]
        for _ in range(50):
            perm = rng.permutation(6)
            assert abs(model.combine_batch(feats[perm][None])[0] - base) < 1e-9

    def test_all_null_is_query_independent_baseline(self, small_reasoner):
        nulls = [R.PairFeature(None)] * small_reasoner.config.k
        logit1, prob1 = small_reasoner.combine(nulls)
        assert logit1 == pytest.approx(small_reasoner.baseline_logit(), abs=1e-12)
        assert prob1 == pytest.approx(1 / (1 + math.exp(-logit1)), abs=1e-12)

    def test_wrong_feature_count_rejected(self, small_reasoner):
        with pytest.raises(R.ReasonerError):
            small_reasoner.combine([R.PairFeature(None)] * 2)


class TestSampleNegatives:
    def _positives(self, n, answer="A"):
        return [R.TrainingExample(i, answer, 1) for i in range(n)]

    def test_two_answers_always_the_other(self):
        negs = R.sample_negatives(self._positives(20, "A"), ["A", "B"], seed=0)
        assert all(n.answer_id == "B" and n.label == 0 for n in negs)

    def test_uniform_over_wrong_answers(self):
        answers = [f"E{i}" for i in range(10)]
        negs = R.sample_negatives(self._positives(9000, "E0"), answers, seed=1)
        counts = [sum(1 for n in negs if n.answer_id == a) for a in answers[1:]]
        assert sum(counts) == 9000
        assert chisquare(counts).pvalue > 0.001
        expected = 9000 / 9
        sigma = math.sqrt(9000 * (1 / 9) * (8 / 9))
        assert all(abs(c - expected) < 3 * sigma + 1 for c in counts)

    def test_same_seed_identical(self):
        pos = self._positives(50, "A")
        a = R.sample_negatives(pos, ["A", "B", "C"], seed=7)
        b = R.sample_negatives(pos, ["A", "B", "C"], seed=7)
        assert a == b

    def test_singleton_answer_set_rejected(self):
        with pytest.raises(R.ReasonerError):
            R.sample_negatives(self._positives(1), ["A"], seed=0)


class TestEvidenceDropout:
    def test_rate_zero_keeps_everything(self):
        rng = np.random.default_rng(0)
        feats = rng.normal(size=(5, 4, 3))
        out, mask = R.apply_evidence_dropout(feats, np.zeros(3), rng, rates=0.0)
        np.testing.assert_array_equal(out, feats)
        assert not mask.any()

    def test_rate_one_nulls_everything(self):
        rng = np.random.default_rng(0)
        feats = rng.normal(size=(5, 4, 3))
        null = np.full(3, 9.0)
        out, mask = R.apply_evidence_dropout(feats, null, rng, rates=1.0)
        assert mask.all()
        np.testing.assert_array_equal(out, np.broadcast_to(null, feats.shape))

    def test_expected_null_fraction_is_half(self):
        rng = np.random.default_rng(123)
        mask = R.dropout_mask(10000, 8, rng)
        assert abs(mask.mean() - 0.5) < 0.02


class TestBiasCorrection:
    def test_c_zero_is_identity(self):
        bias = R.BiasModel({"A": 8, "B": 2}, ("A", "B"))
        f = R.bias_correction(bias, 0.0)
        assert f == {"A": 0.0, "B": 0.0}

    def test_uniform_counts_zero_for_any_c(self):
        bias = R.BiasModel({"A": 5, "B": 5, "C": 5}, ("A", "B", "C"))
        for c in (0.0, 0.3, 1.0):
            f = R.bias_correction(bias, c)
            assert all(abs(v) < 1e-12 for v in f.values())

    def test_worked_example_counts_eight_two(self):
        bias = R.BiasModel({"A": 8, "B": 2}, ("A", "B"))
        f = R.bias_correction(bias, 1.0)
        # Independent direct evaluation of the stated formula.
        want_a = math.log(0.5) - math.log(8 / 10)
        want_b = math.log(0.5) - math.log(2 / 10)
        assert f["A"] == pytest.approx(want_a, abs=1e-12)
        assert f["B"] == pytest.approx(want_b, abs=1e-12)
        assert f["A"] == pytest.approx(-0.470, abs=1e-3)
        assert f["B"] == pytest.approx(0.916, abs=1e-3)

    def test_zero_count_smoothing(self):
        bias = R.BiasModel({"A": 9, "B": 0}, ("A", "B"))
        f = R.bias_correction(bias, 1.0)
        assert f["A"] == pytest.approx(math.log(0.5) - math.log(10 / 11), abs=1e-12)
        assert math.isfinite(f["B"])

    def test_c_out_of_range_rejected(self):
        bias = R.BiasModel({"A": 1}, ("A",))
        for c in (-0.1, 1.1):
            with pytest.raises(R.ReasonerError):
                R.bias_correction(bias, c)


class TestTraining:
    def test_separable_world_balanced_accuracy(self, mini_world):
        scored = R.score_queries(mini_world["reasoner"], mini_world["test_queries"],
                                 mini_world["index"], mini_world["retriever"])
        correct = sum(1 for (logit, prob), label in scored
                      if (prob > 0.5) == bool(label))
        assert correct / len(scored) > 0.95

    def test_zero_epochs_is_initialization(self, mini_world):
        config = R.ReasonerConfig(hidden=16, k=4, heads=2, inducing_points=4,
                                  encoder_blocks=1, decoder_blocks=1)
        model = R.train_reasoner(mini_world["queries"], mini_world["index"],
                                 mini_world["retriever"], config,
                                 R.ReasonerHyper(epochs=0, seed=5))
        init = R.init_reasoner_params(config, seed=5)
        for name in init.names():
            np.testing.assert_array_equal(model.params[name].data, init[name].data)

    def test_shuffled_labels_near_chance(self, mini_world):
        rng = np.random.default_rng(0)
        queries = list(mini_world["queries"])
        answers = [q.answer_id for q in queries]
        rng.shuffle(answers)
        shuffled = [R.QueryExample(q.passage_id, a, q.tokens)
                    for q, a in zip(queries, answers)]
        config = R.ReasonerConfig(hidden=16, k=4, heads=2, inducing_points=4,
                                  encoder_blocks=1, decoder_blocks=1)
        model = R.train_reasoner(shuffled, mini_world["index"],
                                 mini_world["retriever"], config,
                                 R.ReasonerHyper(epochs=4, batch_size=16, lr=3e-3,
                                                 weight_decay=0.0, seed=3))
        scored = R.score_queries(model, mini_world["test_queries"],
                                 mini_world["index"], mini_world["retriever"])
        acc = sum(1 for (l, p), y in scored if (p > 0.5) == bool(y)) / len(scored)
        assert 0.2 <= acc <= 0.8

    def test_query_evidence_overlap_rejected(self, mini_world):
        built = mini_world["built"]
        vocab = mini_world["vocab"]
        overlap_query = [R.QueryExample(p.passage_id, p.answer_id,
                                        tokenize(p.masked_text, vocab))
                         for p in built.passages_in("S1")[:3]]
        with pytest.raises(R.ReasonerError, match="retrieval corpus"):
            R.train_reasoner(overlap_query, mini_world["index"],
                             mini_world["retriever"],
                             R.ReasonerConfig(hidden=16, k=4, heads=2,
                                              inducing_points=4))

    def test_training_deterministic_bit_for_bit(self, mini_world, tmp_path):
        config = R.ReasonerConfig(hidden=16, k=4, heads=2, inducing_points=4,
                                  encoder_blocks=1, decoder_blocks=1)
        hyper = R.ReasonerHyper(epochs=2, batch_size=16, lr=3e-3, seed=11)
        paths = []
        for tag in ("one", "two"):
            model = R.train_reasoner(mini_world["queries"], mini_world["index"],
                                     mini_world["retriever"], config, hyper)
            model.save(tmp_path / tag)
            paths.append((tmp_path / tag / "checkpoint.r2e").read_bytes())
        assert paths[0] == paths[1]


class TestScoring:
    def test_zero_evidence_scores_baseline(self, mini_world):
        model = mini_world["reasoner"]
        # Build an index lacking answer B, then score B.
        from r2e.evidence_index import AnswerPartitionIndex
        from r2e.encoder import EmbeddedPassage
        only_a = AnswerPartitionIndex.build(
            [EmbeddedPassage("pa", "A", np.ones(16, dtype=np.float32))])
        q = np.random.default_rng(0).normal(size=16)
        q /= np.linalg.norm(q)
        detail = R.score_answer_embedding(q, "B", only_a, model)
        assert detail.logit == pytest.approx(model.baseline_logit(), abs=1e-12)
        assert all(f.is_null for f in detail.features)

    def test_score_invariant_to_evidence_permutation(self, mini_world):
        model = mini_world["reasoner"]
        q = mini_world["test_queries"][0]
        detail = R.score_answer(q.tokens, q.answer_id, mini_world["retriever"],
                                mini_world["index"], model)
        rng = np.random.default_rng(1)
        matrix = detail.feature_matrix(model)
        for _ in range(10):
            perm = rng.permutation(len(matrix))
            logit = float(model.combine_batch(matrix[perm][None])[0])
            assert logit == pytest.approx(detail.logit, abs=1e-9)

    def test_true_answer_outranks_wrong_on_signature_queries(self, mini_world):
        for q in mini_world["test_queries"]:
            wrong = "B" if q.answer_id == "A" else "A"
            top = R.score_answer(q.tokens, q.answer_id, mini_world["retriever"],
                                 mini_world["index"], mini_world["reasoner"])
            other = R.score_answer(q.tokens, wrong, mini_world["retriever"],
                                   mini_world["index"], mini_world["reasoner"])
            assert top.prob > other.prob

    def test_unknown_answer_rejected(self, mini_world):
        q = mini_world["test_queries"][0]
        with pytest.raises(R.ReasonerError):
            R.score_answer(q.tokens, "NOPE", mini_world["retriever"],
                           mini_world["index"], mini_world["reasoner"])


class TestRankAll:
    def test_c_zero_matches_raw_order(self, mini_world):
        q = mini_world["test_queries"][0]
        ranking, _ = R.rank_all(q.tokens, mini_world["retriever"],
                                mini_world["index"], mini_world["reasoner"],
                                mini_world["bias"], c=0.0)
        raw_order = sorted(ranking.entries, key=lambda e: (-e.logit, e.answer_id))
        assert [e.answer_id for e in raw_order] == ranking.ordered_ids()
        assert ranking.ordering == "raw"
        for e in ranking.entries:
            assert e.f_c == 0.0 and e.corrected_logit == e.logit

    def test_equal_logits_rank_low_count_answer_first(self):
        from r2e.ranking import rank_by_score
        bias = R.BiasModel({"hi": 8, "lo": 2}, ("hi", "lo"))
        for c in (0.1, 0.5, 1.0):
            f_c = R.bias_correction(bias, c)
            ranking = rank_by_score({"hi": 1.3, "lo": 1.3}, c=c, f_c=f_c)
            assert ranking.ordered_ids()[0] == "lo"

    def test_defaults_echoed(self, mini_world):
        q = mini_world["test_queries"][0]
        ranking, details = R.rank_all(q.tokens, mini_world["retriever"],
                                      mini_world["index"], mini_world["reasoner"],
                                      mini_world["bias"])
        assert ranking.c == 0.5
        assert len(details[q.answer_id].features) == mini_world["reasoner"].config.k
        assert len(ranking.entries) == 2


class TestAuditRescore:
    def test_empty_mask_identity(self, mini_world):
        q = mini_world["test_queries"][0]
        detail = R.score_answer(q.tokens, q.answer_id, mini_world["retriever"],
                                mini_world["index"], mini_world["reasoner"])
        logit, prob = R.audit_rescore(detail, [], mini_world["reasoner"])
        assert logit == detail.logit and prob == detail.prob

    def test_mask_all_reaches_baseline(self, mini_world):
        model = mini_world["reasoner"]
        q = mini_world["test_queries"][0]
        detail = R.score_answer(q.tokens, q.answer_id, mini_world["retriever"],
                                mini_world["index"], model)
        logit, _ = R.audit_rescore(detail, range(model.config.k), model)
        assert logit == pytest.approx(model.baseline_logit(), abs=1e-12)

    def test_single_mask_equals_direct_recomputation(self, mini_world):
        model = mini_world["reasoner"]
        q = mini_world["test_queries"][1]
        detail = R.score_answer(q.tokens, q.answer_id, mini_world["retriever"],
                                mini_world["index"], model)
        for j in range(model.config.k):
            logit, _ = R.audit_rescore(detail, [j], model)
            matrix = detail.feature_matrix(model)
            matrix[j] = model.null_vector
            want = float(model.combine_batch(matrix[None])[0])
            assert logit == pytest.approx(want, abs=0)

    def test_out_of_range_rejected(self, mini_world):
        q = mini_world["test_queries"][0]
        detail = R.score_answer(q.tokens, q.answer_id, mini_world["retriever"],
                                mini_world["index"], mini_world["reasoner"])
        with pytest.raises(R.ReasonerError):
            R.audit_rescore(detail, [99], mini_world["reasoner"])


def test_save_load_roundtrip(tmp_path, mini_world):
    model = mini_world["reasoner"]
    model.save(tmp_path / "scorer")
    again = R.Reasoner.load(tmp_path / "scorer", dtype=np.float64)
    feats = np.random.default_rng(0).normal(size=(2, model.config.k, 16))
    got = again.combine_batch(feats)
    want = model.combine_batch(feats)
    np.testing.assert_allclose(got, want, atol=1e-5)
