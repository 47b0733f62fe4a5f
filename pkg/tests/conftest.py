"""Shared fixtures: a tiny fully-separable two-answer pipeline."""

import numpy as np
import pytest

from r2e import corpus as C
from r2e import encoder as E
from r2e import reasoner as R
from r2e.evidence_index import AnswerPartitionIndex


SIGNATURES = {"A": ["alpha", "apex", "arrow"], "B": ["beta", "bloom", "bay"]}
SURFACES = {"A": "ALPHAGENE", "B": "BETAGENE"}


def _sentence(entity, rng):
    words = list(rng.choice(SIGNATURES[entity], size=3)) + ["assay", "result"]
    rng.shuffle(words)
    slot = rng.integers(0, len(words) + 1)
    words.insert(slot, SURFACES[entity])
    return " ".join(words)


def make_mini_world(n_evidence=40, n_queries=40, n_test=12, seed=0):
    rng = np.random.default_rng(seed)
    dictionary = C.EntityDictionary.from_pairs(
        [(e, s) for e, s in SURFACES.items()])
    docs, assignment = [], {}
    spec = [("S1", n_evidence), ("S2", n_queries), ("S3", n_test)]
    i = 0
    for split, count in spec:
        for _ in range(count):
            entity = "A" if i % 2 == 0 else "B"
            doc_id = f"{split.lower()}d{i}"
            docs.append(C.RawDocument(doc_id, 2000, (_sentence(entity, rng),)))
            assignment[doc_id] = split
            i += 1
    splits = C.CorpusSplits(assignment, C.RandomPolicy((n_evidence, n_queries, n_test)))
    passages = []
    pattern = C._compile_dictionary(dictionary)
    for doc in docs:
        for sent_idx, s in enumerate(doc.sentences):
            mentions = C.link_entities(s, dictionary, _pattern=pattern)
            passages.extend(C.make_masked_examples(
                s, mentions, doc_id=doc.doc_id, year=doc.year, sent_idx=sent_idx))
    built = C.BuiltCorpus(passages, splits, dictionary)
    vocab = C.build_vocab([p.masked_text for p in passages])
    return built, vocab


@pytest.fixture(scope="session")
def mini_world():
    built, vocab = make_mini_world()
    config = E.EncoderConfig(vocab_size=vocab.size, layers=1, heads=2,
                             hidden=16, intermediate=32)
    train = [E.MlmExample(C.tokenize(p.masked_text, vocab), p.answer_id, p.passage_id)
             for p in built.passages_in("S1")]
    retriever = E.train_mlm(train, ["A", "B"], config,
                            E.TrainingHyper(epochs=10, batch_size=16, lr=1e-2, seed=1),
                            vocab=vocab)

    evidence = built.passages_in("S1")
    embedded = E.embed_corpus(evidence, retriever)
    index = AnswerPartitionIndex.build(embedded, {p.passage_id: p for p in evidence})

    queries = [R.QueryExample(p.passage_id, p.answer_id,
                              C.tokenize(p.masked_text, vocab))
               for p in built.passages_in("S2")]
    rconfig = R.ReasonerConfig(hidden=16, k=4, heads=2, inducing_points=4,
                               encoder_blocks=1, decoder_blocks=1)
    scorer = R.train_reasoner(queries, index, retriever, rconfig,
                              R.ReasonerHyper(epochs=25, batch_size=16, lr=3e-3,
                                              weight_decay=0.0, seed=2))

    test_passages = built.passages_in("S3")
    test_queries = [R.QueryExample(p.passage_id, p.answer_id,
                                   C.tokenize(p.masked_text, vocab))
                    for p in test_passages]
    bias = R.BiasModel(dict(built.counts_by_split.get("S1") or
                            _counts(evidence)), ("A", "B"))
    return {
        "built": built, "vocab": vocab, "retriever": retriever, "index": index,
        "reasoner": scorer, "queries": queries, "test_queries": test_queries,
        "bias": bias,
    }


def _counts(passages):
    from collections import Counter
    return Counter(p.answer_id for p in passages)
