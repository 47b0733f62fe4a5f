"""Evidence-set scorer.

Each retrieved evidence embedding is fused with the query embedding into a
pair feature; a set-attention stack combines the k features (order-free)
into one logit for p(match | answer, query). Absent or audited-out slots
carry a learned NULL feature. Training: binary cross-entropy against
uniformly sampled wrong answers, with per-example evidence dropout whose
rate is itself uniform on (0,1). A post-hoc frequency correction can be
added to logits before ranking.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffkernel as dk
from .diffkernel import blocks
from .diffkernel import tensor as T
from .corpus import TokenSequence
from .encoder import MlmModel, encode
from .evidence_index import AnswerPartitionIndex, EvidenceHit
from .ranking import RankedAnswerList, rank_by_score


class ReasonerError(ValueError):
    pass


@dataclass(frozen=True)
class ReasonerConfig:
    hidden: int = 32
    k: int = 64
    pair_channels: tuple[int, int, int] = (2, 8, 1)
    heads: int = 4
    inducing_points: int = 32
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    pair_encoder: str = "conv"  # "conv" | "hadamard"

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ReasonerError("hidden width must be divisible by head count")
        if self.pair_encoder not in ("conv", "hadamard"):
            raise ReasonerError(f"unknown pair encoder {self.pair_encoder!r}")
        if self.pair_channels[0] != 2 or self.pair_channels[-1] != 1:
            raise ReasonerError("pair conv must map 2 channels to 1")


def init_reasoner_params(config: ReasonerConfig, seed: int = 0,
                         dtype=np.float64) -> dk.ParameterSet:
    params = dk.ParameterSet(dtype)
    rng = np.random.default_rng(seed)
    h = config.hidden
    unit = dk.Init("normal", 1.0)
    params.add("null", (h,), unit, rng)
    if config.pair_encoder == "conv":
        c_in, c_mid, c_out = config.pair_channels
        blocks.add_layer_norm_params(params, "pair.ln", (c_in, h), rng)
        params.add("pair.conv1.w", (c_mid, c_in), blocks.scaled_init(c_in), rng)
        params.add("pair.conv1.b", (c_mid, 1), dk.ZEROS, rng)
        params.add("pair.conv2.w", (c_out, c_mid), blocks.scaled_init(c_mid), rng)
        params.add("pair.conv2.b", (c_out, 1), dk.ZEROS, rng)
    for i in range(config.encoder_blocks):
        params.add(f"enc{i}.inducing", (1, config.inducing_points, h), unit, rng)
        _add_mab_params(params, f"enc{i}.mab0", h, rng)
        _add_mab_params(params, f"enc{i}.mab1", h, rng)
    params.add("pma.seed", (1, 1, h), unit, rng)
    params.add("pma.rff.w", (h, h), blocks.scaled_init(h), rng)
    params.add("pma.rff.b", (h,), dk.ZEROS, rng)
    _add_mab_params(params, "pma.mab", h, rng)
    for j in range(config.decoder_blocks):
        _add_mab_params(params, f"dec{j}.mab", h, rng)
    params.add("out.w", (h, 1), blocks.scaled_init(h), rng)
    params.add("out.b", (1,), dk.ZEROS, rng)
    return params


def _add_mab_params(params, prefix, h, rng):
    blocks.add_attention_params(params, f"{prefix}.attn", h, rng)
    blocks.add_layer_norm_params(params, f"{prefix}.ln1", (h,), rng)
    params.add(f"{prefix}.rff.w", (h, h), blocks.scaled_init(h), rng)
    params.add(f"{prefix}.rff.b", (h,), dk.ZEROS, rng)
    blocks.add_layer_norm_params(params, f"{prefix}.ln2", (h,), rng)


def _mab(params, prefix, x, y, heads):
    """Attention block: residual attention, layer norm, residual feed-forward."""
    h1 = blocks.layer_norm(
        params, f"{prefix}.ln1",
        T.add(x, blocks.multihead_attention(params, f"{prefix}.attn", x, y, heads)))
    ff = T.gelu(blocks.affine(h1, params[f"{prefix}.rff.w"], params[f"{prefix}.rff.b"]))
    return blocks.layer_norm(params, f"{prefix}.ln2", T.add(h1, ff))


def pair_graph(config: ReasonerConfig):
    """Fuse query/evidence: inputs q, e of shape [B, k, h] -> features [B, k, h]."""

    def fn(params, inputs):
        q, e = inputs["q"], inputs["e"]
        if config.pair_encoder == "hadamard":
            return {"features": T.mul(q, e)}
        b, k, h = q.shape
        stacked = T.concat([T.reshape(q, (b, k, 1, h)), T.reshape(e, (b, k, 1, h))],
                           axis=2)  # [B, k, 2, h]
        x = T.layer_norm(stacked, params["pair.ln.gain"], params["pair.ln.shift"],
                         n_axes=2)
        x = T.add(T.matmul(params["pair.conv1.w"], x), params["pair.conv1.b"])
        x = T.gelu(x)
        x = T.add(T.matmul(params["pair.conv2.w"], x), params["pair.conv2.b"])
        return {"features": T.reshape(x, (b, k, h))}

    return fn


def combine_graph(config: ReasonerConfig):
    """Set combiner: features [B, k, h] -> logit [B]; permutation invariant."""

    def fn(params, inputs):
        x = inputs["features"]
        for i in range(config.encoder_blocks):
            induced = _mab(params, f"enc{i}.mab0", params[f"enc{i}.inducing"], x,
                           config.heads)
            x = _mab(params, f"enc{i}.mab1", x, induced, config.heads)
        z = T.gelu(blocks.affine(x, params["pma.rff.w"], params["pma.rff.b"]))
        pooled = _mab(params, "pma.mab", params["pma.seed"], z, config.heads)
        for j in range(config.decoder_blocks):
            pooled = _mab(params, f"dec{j}.mab", pooled, pooled, config.heads)
        flat = T.reshape(pooled, (pooled.shape[0], pooled.shape[2]))
        logit = T.add(T.matmul(flat, params["out.w"]), params["out.b"])
        return {"logit": T.reshape(logit, (logit.shape[0],))}

    return fn


def _mix_with_null(params, features, null_mask):
    """Replace masked rows by the learned NULL feature (differentiably)."""
    b, k, h = features.shape
    m = T.Tensor(null_mask.astype(features.data.dtype).reshape(b, k, 1))
    keep = T.Tensor(1.0 - m.data)
    null_row = T.reshape(params["null"], (1, 1, h))
    return T.add(T.mul(m, null_row), T.mul(keep, features))


@dataclass(frozen=True)
class PairFeature:
    """One combiner input: a fused query-evidence vector or the NULL slot."""

    vector: np.ndarray | None  # None = NULL slot
    hit: EvidenceHit | None = None

    @property
    def is_null(self) -> bool:
        return self.vector is None


class Reasoner:
    def __init__(self, config: ReasonerConfig, params: dk.ParameterSet,
                 history: list | None = None):
        self.config = config
        self.params = params
        self.history = history or []
        self._pair = pair_graph(config)
        self._combine = combine_graph(config)

    @property
    def null_vector(self) -> np.ndarray:
        return self.params["null"].data

    def pair_features(self, query: np.ndarray, evidence: np.ndarray) -> np.ndarray:
        """Fuse one query [h] with evidence rows [n, h] -> [n, h]."""
        if evidence.size == 0:
            return np.zeros((0, self.config.hidden), dtype=self.params.dtype)
        if query.shape[-1] != self.config.hidden or evidence.shape[-1] != self.config.hidden:
            raise ReasonerError("width mismatch with reasoner hidden size")
        n = evidence.shape[0]
        q = np.broadcast_to(query.astype(self.params.dtype), (1, n, self.config.hidden))
        e = evidence.astype(self.params.dtype).reshape(1, n, self.config.hidden)
        with T.no_grad():
            out = self._pair(self.params, {"q": T.Tensor(q), "e": T.Tensor(e)})
        return out["features"].data[0]

    def combine_batch(self, features: np.ndarray) -> np.ndarray:
        """Logits for a batch of feature sets [B, n, h]."""
        feats = features.astype(self.params.dtype)
        with T.no_grad():
            out = self._combine(self.params, {"features": T.Tensor(feats)})
        return out["logit"].data

    def combine(self, features: list[PairFeature]) -> tuple[float, float]:
        """Score exactly k features (NULL markers fill gaps) -> (logit, prob)."""
        if len(features) != self.config.k:
            raise ReasonerError(
                f"expected exactly {self.config.k} features, got {len(features)}")
        matrix = self.feature_matrix(features)
        logit = float(self.combine_batch(matrix[None, :, :])[0])
        return logit, _sigmoid(logit)

    def feature_matrix(self, features: list[PairFeature]) -> np.ndarray:
        rows = []
        for f in features:
            rows.append(self.null_vector if f.is_null else
                        np.asarray(f.vector, dtype=self.params.dtype))
        return np.stack(rows) if rows else np.zeros((0, self.config.hidden))

    def baseline_logit(self) -> float:
        """Score of the all-NULL feature set g(empty)."""
        nulls = np.broadcast_to(self.null_vector, (1, self.config.k, self.config.hidden))
        return float(self.combine_batch(np.array(nulls))[0])

    # -- persistence --------------------------------------------------------

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        dk.save_checkpoint(directory / "checkpoint.r2e", self.params.to_arrays())
        (directory / "config.json").write_text(json.dumps({
            "hidden": self.config.hidden, "k": self.config.k,
            "pair_channels": list(self.config.pair_channels),
            "heads": self.config.heads,
            "inducing_points": self.config.inducing_points,
            "encoder_blocks": self.config.encoder_blocks,
            "decoder_blocks": self.config.decoder_blocks,
            "pair_encoder": self.config.pair_encoder,
        }, indent=2) + "\n")

    @classmethod
    def load(cls, directory, dtype=np.float32) -> "Reasoner":
        directory = Path(directory)
        meta = json.loads((directory / "config.json").read_text())
        meta["pair_channels"] = tuple(meta["pair_channels"])
        config = ReasonerConfig(**meta)
        params = init_reasoner_params(config, dtype=dtype)
        params.load_arrays(dk.load_checkpoint(directory / "checkpoint.r2e"))
        return cls(config, params)


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


# ---------------------------------------------------------------------------
# training data assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QueryExample:
    passage_id: str
    answer_id: str
    tokens: TokenSequence


@dataclass(frozen=True)
class TrainingExample:
    query_index: int
    answer_id: str
    label: int


def sample_negatives(positives: list[TrainingExample], answers: list[str],
                     seed: int) -> list[TrainingExample]:
    """One uniform wrong answer per positive; labels balance 1:1."""
    if len(answers) < 2:
        raise ReasonerError("negative sampling needs at least two answers")
    answers = sorted(answers)
    lookup = {a: i for i, a in enumerate(answers)}
    rng = np.random.default_rng(seed)
    out = []
    for pos in positives:
        if pos.label != 1:
            raise ReasonerError("sample_negatives expects positive examples")
        # Draw from the n-1 wrong answers by skipping over the true one.
        j = int(rng.integers(0, len(answers) - 1))
        if j >= lookup[pos.answer_id]:
            j += 1
        out.append(TrainingExample(pos.query_index, answers[j], 0))
    return out


def dropout_rates(n_examples: int, rng: np.random.Generator,
                  rates: np.ndarray | float | None = None) -> np.ndarray:
    if rates is None:
        return rng.uniform(0.0, 1.0, size=n_examples)
    return np.broadcast_to(np.asarray(rates, dtype=float), (n_examples,)).copy()


def dropout_mask(n_examples: int, k: int, rng: np.random.Generator,
                 rates: np.ndarray | float | None = None) -> np.ndarray:
    """Per-example rate r ~ U(0,1); each slot goes NULL independently w.p. r."""
    r = dropout_rates(n_examples, rng, rates)
    return rng.uniform(size=(n_examples, k)) < r[:, None]


def apply_evidence_dropout(features: np.ndarray, null_vector: np.ndarray,
                           rng: np.random.Generator,
                           rates: np.ndarray | float | None = None
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Replace feature rows with the NULL vector; features are [B, k, h]."""
    mask = dropout_mask(features.shape[0], features.shape[1], rng, rates)
    out = features.copy()
    out[mask] = null_vector
    return out, mask


@dataclass(frozen=True)
class ReasonerHyper:
    epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-4
    weight_decay: float = 1e-3
    seed: int = 0


def train_reasoner(queries: list[QueryExample], index: AnswerPartitionIndex,
                   retriever: MlmModel, config: ReasonerConfig,
                   hyper: ReasonerHyper = ReasonerHyper(),
                   val_queries: list[QueryExample] | None = None,
                   log=None) -> Reasoner:
    """BCE training with frozen retriever; queries must be disjoint from the
    retrieval corpus (checked by passage id)."""
    if not queries:
        raise ReasonerError("empty query split")
    evidence_ids = {ref.passage_id for a in index.answer_ids()
                    for ref in index._parts[a].refs}
    overlap = sorted(evidence_ids & {q.passage_id for q in queries})
    if overlap:
        raise ReasonerError(
            f"query passages also present in the retrieval corpus: {overlap[:5]}")

    answers = list(retriever.answer_ids)
    params = init_reasoner_params(config, seed=hyper.seed)
    model = Reasoner(config, params)
    graph_pair = pair_graph(config)
    graph_combine = combine_graph(config)

    def training_graph(p, inputs):
        feats = graph_pair(p, inputs)["features"]
        mixed = _mix_with_null(p, feats, inputs["null_mask"].data)
        logit = graph_combine(p, {"features": mixed})["logit"]
        return {"loss": T.bce_with_logits(logit, inputs["labels"]), "logit": logit}

    q_embs = _normalized_query_embeddings(queries, retriever)
    retrieval_cache: dict[tuple[int, str], np.ndarray] = {}

    def evidence_for(query_index: int, answer_id: str) -> np.ndarray:
        key = (query_index, answer_id)
        found = retrieval_cache.get(key)
        if found is None:
            if answer_id in index:
                hits = index.topk(answer_id, q_embs[query_index], config.k)
                part = index._parts[answer_id]
                found = np.stack([part.vectors[h.row] for h in hits]) if hits \
                    else np.zeros((0, config.hidden), dtype=np.float32)
            else:
                found = np.zeros((0, config.hidden), dtype=np.float32)
            retrieval_cache[key] = found
        return found

    positives = [TrainingExample(i, q.answer_id, 1) for i, q in enumerate(queries)]
    opt = dk.AdamW(params, dk.AdamWConfig(lr=hyper.lr, weight_decay=hyper.weight_decay))
    rng = np.random.default_rng(hyper.seed)

    for epoch in range(hyper.epochs):
        negatives = sample_negatives(positives, answers,
                                     seed=hyper.seed * 100003 + epoch)
        examples = positives + negatives
        order = rng.permutation(len(examples))
        epoch_loss, updates = 0.0, 0
        t0 = time.perf_counter()
        for start in range(0, len(order), hyper.batch_size):
            rows = [examples[i] for i in order[start:start + hyper.batch_size]]
            q_in, e_in, pad_mask, labels = _assemble_batch(rows, q_embs, evidence_for,
                                                           config)
            drop = dropout_mask(len(rows), config.k, rng)
            inputs = {"q": q_in, "e": e_in, "null_mask": (pad_mask | drop),
                      "labels": labels}
            loss, grads = dk.loss_and_grads(training_graph, params, inputs)
            opt.step(params, grads)
            updates += 1
            epoch_loss += loss * len(rows)
        record = {"epoch": epoch, "train_loss": epoch_loss / len(examples),
                  "updates": updates, "seconds": time.perf_counter() - t0}
        if val_queries:
            record["val_loss"] = _validation_loss(model, val_queries, index,
                                                  retriever, hyper.seed)
        model.history.append(record)
        if log:
            print(f"[reasoner] epoch {epoch} loss {record['train_loss']:.4f}"
                  + (f" val {record['val_loss']:.4f}" if "val_loss" in record else ""),
                  file=log)
    return model


def _normalized_query_embeddings(queries, retriever, batch_size: int = 64):
    embs = np.zeros((len(queries), retriever.config.hidden))
    for start in range(0, len(queries), batch_size):
        chunk = queries[start:start + batch_size]
        vecs = encode([q.tokens for q in chunk], retriever.params, retriever.config)
        embs[start:start + len(chunk)] = vecs
    norms = np.linalg.norm(embs, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return embs / norms


def _assemble_batch(rows, q_embs, evidence_for, config):
    b, k, h = len(rows), config.k, config.hidden
    q_in = np.zeros((b, k, h))
    e_in = np.zeros((b, k, h))
    pad_mask = np.ones((b, k), dtype=bool)
    labels = np.zeros(b)
    for i, ex in enumerate(rows):
        q_in[i, :, :] = q_embs[ex.query_index]
        evidence = evidence_for(ex.query_index, ex.answer_id)
        n = evidence.shape[0]
        if n:
            e_in[i, :n, :] = evidence
            pad_mask[i, :n] = False
        labels[i] = ex.label
    return q_in, e_in, pad_mask, labels


def _validation_loss(model, val_queries, index, retriever, seed) -> float:
    answers = list(retriever.answer_ids)
    scored = score_queries(model, val_queries, index, retriever, seed=seed)
    loss = 0.0
    for (logit, _), label in scored:
        z = logit if label == 1 else -logit
        loss += math.log1p(math.exp(-abs(z))) + max(-z, 0.0)
    return loss / len(scored)


def score_queries(model, val_queries, index, retriever, seed=0):
    """Positive + sampled-negative scores for validation monitoring."""
    positives = [TrainingExample(i, q.answer_id, 1) for i, q in enumerate(val_queries)]
    negatives = sample_negatives(positives, list(retriever.answer_ids),
                                 seed=seed + 777)
    q_embs = _normalized_query_embeddings(val_queries, retriever)
    out = []
    for ex in positives + negatives:
        detail = score_answer_embedding(q_embs[ex.query_index], ex.answer_id,
                                        index, model)
        out.append(((detail.logit, detail.prob), ex.label))
    return out


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

@dataclass
class AnswerScoreDetail:
    answer_id: str
    logit: float
    prob: float
    features: list[PairFeature] = field(default_factory=list)

    def feature_matrix(self, model: Reasoner) -> np.ndarray:
        return model.feature_matrix(self.features)


def score_answer_embedding(query_emb: np.ndarray, answer_id: str,
                           index: AnswerPartitionIndex, model: Reasoner,
                           k: int | None = None, year_max: int | None = None,
                           source: str | None = None) -> AnswerScoreDetail:
    """Retrieve, fuse, combine for one answer; NULL-pads short partitions."""
    k = k or model.config.k
    hits = index.topk(answer_id, query_emb, k, year_max, source) \
        if answer_id in index else []
    features: list[PairFeature] = []
    if hits:
        part = index._parts[answer_id]
        evidence = np.stack([part.vectors[h.row] for h in hits])
        fused = model.pair_features(query_emb, evidence)
        features = [PairFeature(fused[i], hits[i]) for i in range(len(hits))]
    features.extend(PairFeature(None) for _ in range(k - len(features)))
    matrix = model.feature_matrix(features)
    logit = float(model.combine_batch(matrix[None, :, :])[0])
    return AnswerScoreDetail(answer_id, logit, _sigmoid(logit), features)


def score_answer(tokens: TokenSequence, answer_id: str, retriever: MlmModel,
                 index: AnswerPartitionIndex, model: Reasoner,
                 k: int | None = None, **filters) -> AnswerScoreDetail:
    if answer_id not in retriever.answer_ids:
        raise ReasonerError(f"unknown answer id {answer_id!r}")
    q = encode(tokens, retriever.params, retriever.config)
    q = q / (np.linalg.norm(q) or 1.0)
    return score_answer_embedding(q, answer_id, index, model, k, **filters)


# ---------------------------------------------------------------------------
# frequency bias correction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BiasModel:
    """Per-answer masked-passage counts in the training corpus."""

    counts: dict[str, float]
    answer_ids: tuple[str, ...]

    def __post_init__(self):
        if any(v < 0 for v in self.counts.values()):
            raise ReasonerError("negative answer count")


def bias_correction(bias: BiasModel, c: float) -> dict[str, float]:
    """Additive logit correction log(1/N) - log(C(a)^c / sum_j C(a_j)^c)."""
    if not 0.0 <= c <= 1.0:
        raise ReasonerError(f"correction strength {c} outside [0, 1]")
    n = len(bias.answer_ids)
    counts = np.array([float(bias.counts.get(a, 0.0)) for a in bias.answer_ids])
    if counts.min() <= 0.0:
        counts = counts + 1.0  # add-one smoothing only when zeros present
    powered = counts ** c
    log_p = np.log(powered) - np.log(powered.sum())
    f = -math.log(n) - log_p
    return {a: float(f[i]) for i, a in enumerate(bias.answer_ids)}


def rank_all(tokens: TokenSequence, retriever: MlmModel,
             index: AnswerPartitionIndex, model: Reasoner, bias: BiasModel,
             k: int | None = None, c: float = 0.5, threads: int | None = None,
             year_max: int | None = None, source: str | None = None
             ) -> tuple[RankedAnswerList, dict[str, AnswerScoreDetail]]:
    """Score the whole answer set; rank by corrected logit (desc, id ties)."""
    k = k or model.config.k
    q = encode(tokens, retriever.params, retriever.config)
    q = q / (np.linalg.norm(q) or 1.0)
    answers = list(retriever.answer_ids)

    indexed = [a for a in answers if a in index]
    all_hits = index.topk_all(indexed, q, k, threads=threads,
                              year_max=year_max, source=source)
    details: dict[str, AnswerScoreDetail] = {}
    feats = np.zeros((len(answers), k, model.config.hidden))
    for i, answer_id in enumerate(answers):
        hits = all_hits.get(answer_id, [])
        features: list[PairFeature] = []
        if hits:
            part = index._parts[answer_id]
            evidence = np.stack([part.vectors[h.row] for h in hits])
            fused = model.pair_features(q, evidence)
            features = [PairFeature(fused[j], hits[j]) for j in range(len(hits))]
        features.extend(PairFeature(None) for _ in range(k - len(features)))
        details[answer_id] = AnswerScoreDetail(answer_id, 0.0, 0.0, features)
        feats[i] = model.feature_matrix(features)

    logits = model.combine_batch(feats)
    f_c = bias_correction(bias, c)
    scores, probs = {}, {}
    for i, answer_id in enumerate(answers):
        details[answer_id].logit = float(logits[i])
        details[answer_id].prob = _sigmoid(float(logits[i]))
        scores[answer_id] = float(logits[i])
        probs[answer_id] = details[answer_id].prob
    ranking = rank_by_score(scores, c=c, f_c=f_c, probs=probs)
    return ranking, details


def audit_rescore(detail: AnswerScoreDetail, null_indices, model: Reasoner
                  ) -> tuple[float, float]:
    """Re-combine with the listed feature slots forced to NULL."""
    k = len(detail.features)
    bad = [i for i in null_indices if not 0 <= int(i) < k]
    if bad:
        raise ReasonerError(f"evidence indices out of range: {bad}")
    matrix = detail.feature_matrix(model).copy()
    for i in null_indices:
        matrix[int(i)] = model.null_vector
    logit = float(model.combine_batch(matrix[None, :, :])[0])
    return logit, _sigmoid(logit)
