"""Synthetic bag-of-words worlds with a closed-form answer posterior.

Each sentence draws an entity from a prior, then tokens i.i.d. from a
mixture of that entity's signature distribution and a shared noise
distribution covering the whole vocabulary. Because generation is fully
known, P(answer | tokens) follows from Bayes' rule exactly, giving an
oracle for acceptance checks on trained rankers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import corpus as C


class SynthWorldError(ValueError):
    pass


@dataclass(frozen=True)
class SynthWorldSpec:
    n_entities: int = 12
    signature_size: int = 3       # signature tokens per entity
    n_noise_tokens: int = 20
    neighbor_overlap: float = 0.3  # signature mass leaking to ring neighbors
    ring_tau: float = 0.0          # >0: exp(-distance/tau) kernel instead
    mixing_weight: float = 0.8     # P(token drawn from the signature dist)
    sentence_tokens: tuple[int, int] = (8, 14)
    sentences_per_entity: int = 40
    frequency_slope: float = 1.0   # entity i weight 1 + slope * i / n
    geometric_ratio: float = 0.0   # >1: weight ratio^i instead (well-separated)
    min_sentences: int = 1         # floor on per-entity sentence count
    entity_sentence_counts: tuple[int, ...] | None = None  # explicit override
    diagnostic_rate: float = 1.0   # P(sentence carries signature tokens);
                                   # the rest draw from the noise pool alone
    sentences_per_doc: int = 4
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)

    def __post_init__(self):
        if self.n_entities < 2:
            raise SynthWorldError("need at least two entities")
        if not 0.0 <= self.mixing_weight <= 1.0:
            raise SynthWorldError("mixing weight outside [0, 1]")
        if not 0.0 <= self.neighbor_overlap < 1.0:
            raise SynthWorldError("overlap outside [0, 1)")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise SynthWorldError("split fractions must sum to 1")


@dataclass(frozen=True)
class HeldOutQuery:
    passage: C.MaskedPassage
    gold_answer: str
    log_posterior: np.ndarray  # over entities, answer-id order


@dataclass
class SynthWorld:
    spec: SynthWorldSpec
    entity_ids: list[str]
    dictionary: C.EntityDictionary
    docs: list[C.RawDocument]
    splits: C.CorpusSplits
    token_given_entity: np.ndarray  # [n_entities, vocab] diagnostic mixture
    noise_only: np.ndarray          # [vocab] generic-sentence distribution
    log_prior: np.ndarray
    vocab_tokens: list[str]
    heldout: list[HeldOutQuery] = field(default_factory=list)

    def token_index(self, token: str) -> int | None:
        try:
            return self.vocab_tokens.index(token)
        except ValueError:
            return None

    def log_posterior(self, tokens: list[str]) -> np.ndarray:
        """log P(entity | content tokens), normalized; unknown tokens ignored.

        Sentences carry a latent type (diagnostic vs generic); the likelihood
        marginalizes it: P(T|a) = rate * prod M_a(t) + (1-rate) * prod U(t).
        """
        gamma = self.spec.diagnostic_rate
        diag = np.zeros(len(self.entity_ids))
        generic = 0.0
        with np.errstate(divide="ignore"):  # zero-probability tokens -> -inf
            for tok in tokens:
                idx = self.token_index(tok)
                if idx is not None:
                    diag += np.log(self.token_given_entity[:, idx])
                    generic += np.log(self.noise_only[idx])
            if gamma >= 1.0:
                loglik = diag
            else:
                branches = np.stack([np.log(gamma) + diag,
                                     np.full_like(diag, np.log1p(-gamma) + generic)])
                m = branches.max(axis=0)
                safe = np.where(np.isfinite(m), m, 0.0)
                loglik = safe + np.log(np.exp(branches - safe).sum(axis=0))
        logp = self.log_prior + loglik
        logp -= _logsumexp(logp)
        return logp

    def posterior(self, tokens: list[str]) -> np.ndarray:
        return np.exp(self.log_posterior(tokens))

    def posterior_for_masked_text(self, masked_text: str) -> np.ndarray:
        tokens = [t for t in C.split_words(masked_text) if t != C.MASK_TOKEN]
        return self.log_posterior(tokens)


def _logsumexp(x: np.ndarray) -> float:
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


def generate_synth_world(spec: SynthWorldSpec, seed: int = 0) -> SynthWorld:
    rng = np.random.default_rng(seed)
    n = spec.n_entities
    entity_ids = [f"E{i:02d}" for i in range(n)]
    surfaces = {e: f"GENE{i:02d}" for i, e in enumerate(entity_ids)}
    dictionary = C.EntityDictionary.from_pairs(
        [(e, surfaces[e]) for e in entity_ids])

    sig_tokens = [f"sig{i:02d}x{j}" for i in range(n)
                  for j in range(spec.signature_size)]
    noise_tokens = [f"noise{j:02d}" for j in range(spec.n_noise_tokens)]
    vocab_tokens = sig_tokens + noise_tokens
    v = len(vocab_tokens)

    # Signature distribution over token groups arranged on a ring: either
    # mass split with the two immediate neighbors, or a smooth exponential
    # distance kernel so every entity pair has distinct token likelihoods.
    signature = np.zeros((n, v))
    for i in range(n):
        if spec.ring_tau > 0.0:
            dist = np.minimum(np.abs(np.arange(n) - i),
                              n - np.abs(np.arange(n) - i))
            group_mass = np.exp(-dist / spec.ring_tau)
            group_mass /= group_mass.sum()
            for j in range(n):
                sl = slice(j * spec.signature_size, (j + 1) * spec.signature_size)
                signature[i, sl] = group_mass[j] / spec.signature_size
        else:
            own = slice(i * spec.signature_size, (i + 1) * spec.signature_size)
            signature[i, own] = (1.0 - spec.neighbor_overlap) / spec.signature_size
            for nb in ((i - 1) % n, (i + 1) % n):
                sl = slice(nb * spec.signature_size, (nb + 1) * spec.signature_size)
                signature[i, sl] += spec.neighbor_overlap / (2 * spec.signature_size)
    noise = np.full(v, 1.0 / v)
    token_given_entity = spec.mixing_weight * signature \
        + (1.0 - spec.mixing_weight) * noise
    np.testing.assert_allclose(token_given_entity.sum(axis=1), 1.0, atol=1e-9)
    noise_only = np.zeros(v)
    noise_only[len(sig_tokens):] = 1.0 / spec.n_noise_tokens

    if spec.entity_sentence_counts is not None:
        if len(spec.entity_sentence_counts) != n:
            raise SynthWorldError("explicit counts must cover every entity")
        counts = np.asarray(spec.entity_sentence_counts, dtype=int)
    else:
        if spec.geometric_ratio > 1.0:
            weights = spec.geometric_ratio ** np.arange(n, dtype=float)
        else:
            weights = 1.0 + spec.frequency_slope * np.arange(n) / max(n - 1, 1)
        counts = np.maximum(max(1, spec.min_sentences), np.round(
            weights / weights.sum() * spec.sentences_per_entity * n)).astype(int)
    log_prior = np.log(counts / counts.sum())

    sentences: list[tuple[str, str]] = []  # (entity, text)
    for i, entity in enumerate(entity_ids):
        for _ in range(counts[i]):
            length = int(rng.integers(spec.sentence_tokens[0],
                                      spec.sentence_tokens[1] + 1))
            dist = token_given_entity[i] \
                if rng.uniform() < spec.diagnostic_rate else noise_only
            toks = [vocab_tokens[t] for t in rng.choice(v, size=length, p=dist)]
            toks.insert(int(rng.integers(0, length + 1)), surfaces[entity])
            sentences.append((entity, " ".join(toks)))
    order = rng.permutation(len(sentences))

    docs = []
    for d in range(0, len(order), spec.sentences_per_doc):
        rows = order[d:d + spec.sentences_per_doc]
        docs.append(C.RawDocument(
            f"doc{d // spec.sentences_per_doc:04d}", 2000 + (d % 7),
            tuple(sentences[i][1] for i in rows)))

    n_docs = len(docs)
    n1 = int(round(spec.split_fractions[0] * n_docs))
    n2 = int(round(spec.split_fractions[1] * n_docs))
    splits = C.build_splits(docs, C.RandomPolicy((n1, n2, n_docs - n1 - n2),
                                                 seed=seed + 1))

    world = SynthWorld(spec, entity_ids, dictionary, docs, splits,
                       token_given_entity, noise_only, log_prior, vocab_tokens)
    world.heldout = _heldout_queries(world)
    return world


def _heldout_queries(world: SynthWorld) -> list[HeldOutQuery]:
    s3_docs = set(world.splits.doc_ids("S3"))
    pattern = C._compile_dictionary(world.dictionary)
    out = []
    for doc in world.docs:
        if doc.doc_id not in s3_docs:
            continue
        for sent_idx, sentence in enumerate(doc.sentences):
            mentions = C.link_entities(sentence, world.dictionary, _pattern=pattern)
            for p in C.make_masked_examples(sentence, mentions, doc_id=doc.doc_id,
                                            year=doc.year, sent_idx=sent_idx):
                out.append(HeldOutQuery(
                    p, p.answer_id, world.posterior_for_masked_text(p.masked_text)))
    return out


def sample_tokens(world: SynthWorld, n_sentences: int, length: int,
                  seed: int = 0) -> list[tuple[str, tuple[str, ...]]]:
    """Entity + raw content tokens, for empirical posterior checks."""
    rng = np.random.default_rng(seed)
    prior = np.exp(world.log_prior)
    n, v = world.token_given_entity.shape
    entities = rng.choice(n, size=n_sentences, p=prior)
    out = []
    for e in entities:
        dist = world.token_given_entity[e] \
            if rng.uniform() < world.spec.diagnostic_rate else world.noise_only
        toks = tuple(world.vocab_tokens[t] for t in rng.choice(v, size=length, p=dist))
        out.append((world.entity_ids[e], toks))
    return out
