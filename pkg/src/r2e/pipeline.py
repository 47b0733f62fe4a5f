"""Artifact pipeline: ingest -> train retriever -> embed + index -> train
scorer -> serve/rank. Each stage reads and writes versioned files so runs
are resumable and reproducible."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corpus as C
from . import encoder as E
from . import reasoner as R
from .attribution import (LOGIT, PROBABILITY, AttributionResult,
                          attach_bias_feature, make_set_function,
                          shapley_permutation)
from .evidence_index import AnswerPartitionIndex, file_checksum
from .metrics import freq_baseline, mcs_baseline
from .ranking import RankedAnswerList


class StageError(RuntimeError):
    """A pipeline stage was run before its dependencies exist."""


@dataclass(frozen=True)
class CorpusDir:
    root: Path

    @property
    def masked(self) -> Path:
        return self.root / "masked.jsonl"

    @property
    def splits(self) -> Path:
        return self.root / "splits.json"

    @property
    def vocab(self) -> Path:
        return self.root / "vocab.json"

    @property
    def counts(self) -> Path:
        return self.root / "counts.json"

    @property
    def answers(self) -> Path:
        return self.root / "answers.json"

    def require(self) -> "CorpusDir":
        missing = [p.name for p in (self.masked, self.splits, self.vocab,
                                    self.counts, self.answers) if not p.exists()]
        if missing:
            raise StageError(
                f"corpus artifacts missing from {self.root}: {missing}; "
                "run ingest first")
        return self


def ingest(docs_path, dictionary_path, out_dir, policy,
           template_path=None, template: str = C.DEFAULT_TEMPLATE,
           min_count: int = 1) -> dict:
    """Build the masked corpus + splits + vocab + per-split answer counts."""
    out = CorpusDir(Path(out_dir))
    out.root.mkdir(parents=True, exist_ok=True)
    docs = C.read_documents(docs_path)
    dictionary = C.read_dictionary(dictionary_path)
    if docs:
        built = C.build_corpus(docs, dictionary, policy)
        passages, splits = built.passages, built.splits
    else:
        passages, splits = [], C.CorpusSplits({}, policy)

    templated: list[C.MaskedPassage] = []
    if template_path is not None:
        records = C.read_template_records(template_path)
        templated = C.template_records(records, template)
        passages = passages + templated

    C.write_masked_corpus(out.masked, passages)
    C.save_splits(out.splits, splits)
    vocab = C.build_vocab([p.masked_text for p in passages], min_count=min_count)
    vocab.save(out.vocab)
    counts: dict[str, Counter] = {name: Counter() for name in C.SPLIT_NAMES}
    counts["templated"] = Counter()
    for p in passages:
        split = splits.assignment.get(p.doc_id, "templated")
        counts[split][p.answer_id] += 1
    out.counts.write_text(json.dumps(
        {k: dict(sorted(v.items())) for k, v in counts.items()},
        sort_keys=True, indent=0) + "\n")
    out.answers.write_text(json.dumps(dictionary.entity_ids, indent=0) + "\n")
    return {"documents": len(docs), "passages": len(passages),
            "templated": len(templated), "splits": splits.sizes(),
            "vocab_size": vocab.size, "answers": len(dictionary.entity_ids)}


def load_corpus(corpus_dir) -> tuple[list[C.MaskedPassage], C.CorpusSplits,
                                     C.Vocab, dict, list[str]]:
    cd = CorpusDir(Path(corpus_dir)).require()
    passages = C.read_masked_corpus(cd.masked)
    splits = C.load_splits(cd.splits)
    vocab = C.Vocab.load(cd.vocab)
    counts = json.loads(cd.counts.read_text())
    answers = json.loads(cd.answers.read_text())
    return passages, splits, vocab, counts, answers


def _passages_in_splits(passages, splits, wanted: tuple[str, ...],
                        include_templated: bool = False):
    out = []
    for p in passages:
        split = splits.assignment.get(p.doc_id)
        if split in wanted or (include_templated and split is None):
            out.append(p)
    return out


def train_retriever_stage(corpus_dir, out_dir, config: E.EncoderConfig | None = None,
                          hyper: E.TrainingHyper = E.TrainingHyper(),
                          log=None) -> dict:
    passages, splits, vocab, _, answers = load_corpus(corpus_dir)
    config = config or E.EncoderConfig(vocab_size=vocab.size)
    if config.vocab_size != vocab.size:
        raise StageError(f"encoder vocab size {config.vocab_size} does not match "
                         f"corpus vocab {vocab.size}")
    train = [E.MlmExample(C.tokenize(p.masked_text, vocab), p.answer_id, p.passage_id)
             for p in _passages_in_splits(passages, splits, ("S1",))]
    val = [E.MlmExample(C.tokenize(p.masked_text, vocab), p.answer_id, p.passage_id)
           for p in _passages_in_splits(passages, splits, ("S2",))]
    model = E.train_mlm(train, answers, config, hyper, vocab=vocab,
                        val_examples=val or None, log=log)
    model.save(out_dir)
    return {"examples": len(train), "history": model.history}


def build_index_stage(corpus_dir, retriever_dir, out_path,
                      evidence_splits: tuple[str, ...] = ("S1",),
                      include_templated: bool = True, log=None) -> dict:
    passages, splits, _, _, _ = load_corpus(corpus_dir)
    retriever = _load_retriever(retriever_dir)
    evidence = _passages_in_splits(passages, splits, evidence_splits,
                                   include_templated=include_templated)
    embedded = E.embed_corpus(evidence, retriever, log=log)
    index = AnswerPartitionIndex.build(embedded, {p.passage_id: p for p in evidence})
    index.save(out_path)
    return {"passages": len(evidence), "answers": len(index.answer_ids()),
            "checksum": file_checksum(out_path)}


def train_reasoner_stage(corpus_dir, retriever_dir, index_path, out_dir,
                         config: R.ReasonerConfig | None = None,
                         hyper: R.ReasonerHyper = R.ReasonerHyper(),
                         query_split: str = "S2", log=None) -> dict:
    passages, splits, vocab, _, _ = load_corpus(corpus_dir)
    retriever = _load_retriever(retriever_dir)
    index = _load_index(index_path)
    config = config or R.ReasonerConfig(hidden=retriever.config.hidden)
    if config.hidden != retriever.config.hidden:
        raise StageError("scorer width does not match retriever hidden size")
    queries = [R.QueryExample(p.passage_id, p.answer_id,
                              C.tokenize(p.masked_text, vocab))
               for p in _passages_in_splits(passages, splits, (query_split,))]
    if not queries:
        raise StageError(f"no query passages in split {query_split}")
    model = R.train_reasoner(queries, index, retriever, config, hyper, log=log)
    model.save(out_dir)
    return {"queries": len(queries), "history": model.history}


def _load_retriever(retriever_dir, dtype=np.float64) -> E.MlmModel:
    path = Path(retriever_dir)
    if not (path / "checkpoint.r2e").exists():
        raise StageError(f"retriever checkpoint missing from {path}; "
                         "run train-retriever first")
    return E.MlmModel.load(path, dtype=dtype)


def _load_index(index_path) -> AnswerPartitionIndex:
    path = Path(index_path)
    if not path.exists():
        raise StageError(f"index file {path} missing; run build-index first")
    return AnswerPartitionIndex.load(path)


def _load_reasoner(reasoner_dir, dtype=np.float64) -> R.Reasoner:
    path = Path(reasoner_dir)
    if not (path / "checkpoint.r2e").exists():
        raise StageError(f"scorer checkpoint missing from {path}; "
                         "run train-reasoner first")
    return R.Reasoner.load(path, dtype=dtype)


@dataclass(frozen=True)
class Defaults:
    k: int = 64
    c: float = 0.5
    m_permutations: int = 100


class ModelBundle:
    """Everything inference needs, loaded once and immutable thereafter."""

    def __init__(self, retriever: E.MlmModel, index: AnswerPartitionIndex,
                 reasoner: R.Reasoner, bias: R.BiasModel,
                 passages: dict[str, C.MaskedPassage], split_sizes: dict[str, int],
                 index_checksum: str, defaults: Defaults = Defaults()):
        self.retriever = retriever
        self.index = index
        self.reasoner = reasoner
        self.bias = bias
        self.passages = passages
        self.split_sizes = split_sizes
        self.index_checksum = index_checksum
        self.defaults = defaults

    @classmethod
    def load(cls, corpus_dir, retriever_dir, reasoner_dir, index_path,
             defaults: Defaults = Defaults(), dtype=np.float32,
             bias_split: str = "S1") -> "ModelBundle":
        passages, splits, _, counts, answers = load_corpus(corpus_dir)
        retriever = _load_retriever(retriever_dir, dtype=dtype)
        reasoner = _load_reasoner(reasoner_dir, dtype=dtype)
        index = _load_index(index_path)
        bias = R.BiasModel({a: float(v) for a, v in counts.get(bias_split, {}).items()},
                           tuple(retriever.answer_ids))
        return cls(retriever, index, reasoner, bias,
                   {p.passage_id: p for p in passages}, splits.sizes(),
                   file_checksum(index_path), defaults)

    @property
    def answer_ids(self) -> tuple[str, ...]:
        return tuple(self.retriever.answer_ids)

    def tokenize(self, query_text: str) -> C.TokenSequence:
        return C.tokenize(query_text, self.retriever.vocab)

    def query_embedding(self, query_text: str) -> np.ndarray:
        q = E.encode(self.tokenize(query_text), self.retriever.params,
                     self.retriever.config)
        norm = np.linalg.norm(q)
        return q / norm if norm else q

    def rank(self, query_text: str, k: int | None = None, c: float | None = None,
             year_max: int | None = None, threads: int | None = None
             ) -> tuple[RankedAnswerList, dict[str, R.AnswerScoreDetail]]:
        return R.rank_all(self.tokenize(query_text), self.retriever, self.index,
                          self.reasoner, self.bias,
                          k=k or self.defaults.k,
                          c=self.defaults.c if c is None else c,
                          year_max=year_max, threads=threads)

    def explain(self, detail: R.AnswerScoreDetail, output_space: str = PROBABILITY,
                m_permutations: int | None = None, seed: int = 0,
                c: float | None = None) -> AttributionResult:
        feats = detail.feature_matrix(self.reasoner)
        g = make_set_function(self.reasoner, feats, output_space)
        result = shapley_permutation(
            g, k=feats.shape[0], m=m_permutations or self.defaults.m_permutations,
            seed=seed, output_space=output_space)
        c = self.defaults.c if c is None else c
        if output_space == LOGIT and c > 0:
            f_c = R.bias_correction(self.bias, c)
            result = attach_bias_feature(result, f_c[detail.answer_id])
        return result

    def explain_payload(self, detail: R.AnswerScoreDetail,
                        result: AttributionResult) -> dict:
        evidence = []
        for i, feature in enumerate(detail.features):
            if feature.is_null or feature.hit is None:
                continue
            ref = feature.hit.ref
            passage = self.passages.get(ref.passage_id)
            evidence.append({
                "index": i,
                "passage_id": ref.passage_id,
                "text": passage.masked_text if passage else "",
                "doc_id": ref.doc_id,
                "year": ref.year,
                "source": ref.source,
                "similarity": feature.hit.similarity,
                "shapley": float(result.shapley[i]),
            })
        evidence.sort(key=lambda e: -e["shapley"])
        return {
            "answer_id": detail.answer_id,
            "baseline": result.baseline,
            "total": result.total,
            "output_space": result.output_space,
            "bias_term": result.bias_term,
            "n_permutations": result.n_permutations,
            "evidence": evidence,
        }

    def evidence_for(self, answer_id: str, query_text: str, k: int | None = None,
                     year_max: int | None = None):
        if answer_id not in self.index:
            return None
        q = self.query_embedding(query_text)
        return self.index.topk(answer_id, q, k or self.defaults.k, year_max=year_max)

    def stats(self) -> dict:
        return {
            "answers": self.index.counts(),
            "splits": self.split_sizes,
            "index_checksum": self.index_checksum,
            "n_passages": len(self.passages),
            "answer_set_size": len(self.answer_ids),
        }

    # baselines share the bundle's query encoder/index
    def rank_freq(self) -> RankedAnswerList:
        counts = {a: float(self.bias.counts.get(a, 0.0)) for a in self.answer_ids}
        return freq_baseline(counts)

    def rank_mcs(self, query_text: str, k: int | None = None,
                 year_max: int | None = None) -> RankedAnswerList:
        q = self.query_embedding(query_text)
        return mcs_baseline(q, self.index, k or self.defaults.k,
                            answer_ids=self.answer_ids, year_max=year_max)

    def rank_mlm(self, query_text: str) -> RankedAnswerList:
        return E.rank_answers_mlm(self.tokenize(query_text), self.retriever)
