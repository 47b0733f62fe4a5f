"""Synthetic worlds: posterior oracle correctness and sampling convergence."""

import numpy as np
import pytest

from r2e import synthworld as S
from r2e.corpus import MASK_TOKEN


def test_disjoint_signatures_pure_signal_posterior_is_one_hot():
    spec = S.SynthWorldSpec(n_entities=4, neighbor_overlap=0.0,
                            mixing_weight=1.0, sentences_per_entity=10)
    world = S.generate_synth_world(spec, seed=0)
    for q in world.heldout[:10]:
        p = np.exp(q.log_posterior)
        gold = world.entity_ids.index(q.gold_answer)
        assert p[gold] == pytest.approx(1.0, abs=1e-12)


def test_all_noise_posterior_equals_prior():
    spec = S.SynthWorldSpec(n_entities=5, mixing_weight=0.0,
                            sentences_per_entity=10, frequency_slope=2.0)
    world = S.generate_synth_world(spec, seed=1)
    for q in world.heldout[:10]:
        np.testing.assert_allclose(q.log_posterior, world.log_prior, atol=1e-9)


def test_posterior_normalized_per_query():
    world = S.generate_synth_world(S.SynthWorldSpec(n_entities=8), seed=2)
    assert len(world.heldout) > 0
    for q in world.heldout:
        assert np.exp(q.log_posterior).sum() == pytest.approx(1.0, abs=1e-9)


def test_masked_text_posterior_ignores_mask_and_unknowns():
    world = S.generate_synth_world(S.SynthWorldSpec(n_entities=4), seed=3)
    toks = ["sig00x0", "noise01"]
    direct = world.log_posterior(toks)
    via_text = world.posterior_for_masked_text(
        f"{MASK_TOKEN} sig00x0 noise01")
    np.testing.assert_allclose(via_text, direct, atol=1e-12)


def test_splits_partition_documents():
    world = S.generate_synth_world(S.SynthWorldSpec(n_entities=6), seed=4)
    sizes = world.splits.sizes()
    assert sum(sizes.values()) == len(world.docs)
    assert sizes["S1"] > sizes["S2"] > 0 and sizes["S3"] > 0


def test_generation_deterministic():
    spec = S.SynthWorldSpec(n_entities=4, sentences_per_entity=6)
    a = S.generate_synth_world(spec, seed=9)
    b = S.generate_synth_world(spec, seed=9)
    assert [d.sentences for d in a.docs] == [d.sentences for d in b.docs]
    assert a.splits.assignment == b.splits.assignment


def test_invalid_specs_rejected():
    with pytest.raises(S.SynthWorldError):
        S.SynthWorldSpec(n_entities=1)
    with pytest.raises(S.SynthWorldError):
        S.SynthWorldSpec(mixing_weight=1.5)
    with pytest.raises(S.SynthWorldError):
        S.SynthWorldSpec(split_fractions=(0.5, 0.2, 0.2))


def test_empirical_frequencies_converge_to_posterior():
    """Sampled answer frequencies per token pattern approach the oracle."""
    spec = S.SynthWorldSpec(n_entities=3, signature_size=1, n_noise_tokens=2,
                            neighbor_overlap=0.2, mixing_weight=0.7,
                            sentences_per_entity=5)
    world = S.generate_synth_world(spec, seed=5)
    samples = S.sample_tokens(world, n_sentences=50000, length=2, seed=6)
    by_pattern: dict[tuple, list[str]] = {}
    for entity, toks in samples:
        by_pattern.setdefault(tuple(sorted(toks)), []).append(entity)
    checked = 0
    for pattern, entities in by_pattern.items():
        if len(entities) < 2000:
            continue
        emp = np.array([entities.count(e) for e in world.entity_ids],
                       dtype=float) / len(entities)
        gold = world.posterior(list(pattern))
        tv = 0.5 * np.abs(emp - gold).sum()
        assert tv < 0.05, f"pattern {pattern}: TV={tv:.3f}"
        checked += 1
    assert checked >= 3
