"""Masked-token encoder: the multiclass baseline ranker and the retriever.

A small transformer encodes a masked passage; the query embedding is the
mean of final-layer outputs at mask positions. A learned per-answer
embedding plus bias turns that vector into a distribution over the answer
set via softmax.
"""

from __future__ import annotations

import math
import struct
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffkernel as dk
from .diffkernel import blocks
from .diffkernel import tensor as T
from .corpus import SEQUENCE_LENGTH, TokenSequence, Vocab, tokenize
from .ranking import RankedAnswerList, rank_by_score


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 4
    hidden: int = 32
    intermediate: int = 64
    max_len: int = SEQUENCE_LENGTH

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise EncoderError("hidden width must be divisible by head count")


@dataclass(frozen=True)
class TrainingHyper:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 0.0
    seed: int = 0
    keep_best_val: bool = False  # roll back to the best validation epoch


def init_encoder_params(config: EncoderConfig, answers: list[str],
                        seed: int = 0, dtype=np.float64) -> dk.ParameterSet:
    params = dk.ParameterSet(dtype)
    rng = np.random.default_rng(seed)
    unit = dk.Init("normal", 1.0)
    params.add("tok_emb", (config.vocab_size, config.hidden), unit, rng)
    params.add("pos_emb", (config.max_len, config.hidden), unit, rng)
    blocks.add_layer_norm_params(params, "emb_ln", (config.hidden,), rng)
    for i in range(config.layers):
        blocks.add_attention_params(params, f"layer{i}.attn", config.hidden, rng)
        blocks.add_layer_norm_params(params, f"layer{i}.ln1", (config.hidden,), rng)
        blocks.add_ffn_params(params, f"layer{i}.ffn", config.hidden,
                              config.intermediate, rng)
        blocks.add_layer_norm_params(params, f"layer{i}.ln2", (config.hidden,), rng)
    params.add("answer.embedding", (len(answers), config.hidden),
               blocks.scaled_init(config.hidden), rng)
    params.add("answer.bias", (len(answers),), dk.ZEROS, rng)
    return params


@dataclass(frozen=True)
class AnswerTable:
    """Per-answer embedding rows and biases, row order = sorted answer ids."""

    answer_ids: tuple[str, ...]
    embeddings: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        if self.embeddings.shape[0] != len(self.answer_ids):
            raise EncoderError("answer table row count mismatch")
        if self.biases.shape != (len(self.answer_ids),):
            raise EncoderError("answer bias shape mismatch")

    def index_of(self, answer_id: str) -> int:
        try:
            return self.answer_ids.index(answer_id)
        except ValueError:
            raise EncoderError(f"unknown answer id {answer_id!r}") from None


def _batch_arrays(sequences: list[TokenSequence], dtype):
    ids = np.array([s.ids for s in sequences], dtype=np.int64)
    batch = len(sequences)
    attn_mask = np.zeros((batch, 1, 1, SEQUENCE_LENGTH), dtype=dtype)
    pool = np.zeros((batch, 1, SEQUENCE_LENGTH), dtype=dtype)
    for row, seq in enumerate(sequences):
        if not seq.mask_positions:
            raise EncoderError("sequence has no mask token")
        attn_mask[row, 0, 0, seq.valid_length:] = T.MASK_FILL
        pool[row, 0, list(seq.mask_positions)] = 1.0 / len(seq.mask_positions)
    return ids, attn_mask, pool


def encoder_graph(config: EncoderConfig):
    """Graph fn: token ids + masks -> query embeddings [B, h]."""

    def fn(params, inputs):
        ids = inputs["ids"]
        x = T.add(T.embedding(params["tok_emb"], ids),
                  T.embedding(params["pos_emb"],
                              np.arange(ids.data.shape[1] if isinstance(ids, T.Tensor)
                                        else ids.shape[1])))
        x = blocks.layer_norm(params, "emb_ln", x)
        for i in range(config.layers):
            attn = blocks.multihead_attention(
                params, f"layer{i}.attn", x, x, config.heads,
                additive_mask=inputs["attn_mask"])
            x = blocks.layer_norm(params, f"layer{i}.ln1", T.add(x, attn))
            x = blocks.layer_norm(params, f"layer{i}.ln2",
                                  T.add(x, blocks.ffn(params, f"layer{i}.ffn", x)))
        pooled = T.matmul(inputs["pool"], x)  # [B, 1, h]
        return {"query": T.reshape(pooled, (pooled.shape[0], pooled.shape[2])),
                "hidden": x}

    return fn


def mlm_graph(config: EncoderConfig):
    """Training graph: adds answer logits and cross-entropy loss."""
    enc = encoder_graph(config)

    def fn(params, inputs):
        outs = enc(params, inputs)
        logits = T.add(T.matmul(outs["query"],
                                T.transpose(params["answer.embedding"], (1, 0))),
                       params["answer.bias"])
        outs["logits"] = logits
        if "targets" in inputs:
            outs["loss"] = T.cross_entropy(logits, inputs["targets"])
        return outs

    return fn


@dataclass
class MlmModel:
    config: EncoderConfig
    params: dk.ParameterSet
    answer_ids: tuple[str, ...]
    vocab: Vocab
    history: list[dict] = field(default_factory=list)

    @property
    def table(self) -> AnswerTable:
        return AnswerTable(self.answer_ids,
                           self.params["answer.embedding"].data,
                           self.params["answer.bias"].data)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        dk.save_checkpoint(directory / "checkpoint.r2e", self.params.to_arrays())
        meta = {
            "config": {"vocab_size": self.config.vocab_size,
                       "layers": self.config.layers, "heads": self.config.heads,
                       "hidden": self.config.hidden,
                       "intermediate": self.config.intermediate,
                       "max_len": self.config.max_len},
            "answers": list(self.answer_ids),
        }
        import json
        (directory / "config.json").write_text(json.dumps(meta, indent=2) + "\n")
        self.vocab.save(directory / "vocab.json")

    @classmethod
    def load(cls, directory, dtype=np.float32) -> "MlmModel":
        import json
        directory = Path(directory)
        meta = json.loads((directory / "config.json").read_text())
        config = EncoderConfig(**meta["config"])
        vocab = Vocab.load(directory / "vocab.json")
        answers = tuple(meta["answers"])
        params = init_encoder_params(config, list(answers), dtype=dtype)
        params.load_arrays(dk.load_checkpoint(directory / "checkpoint.r2e"))
        return cls(config, params, answers, vocab)


def encode(sequences: list[TokenSequence] | TokenSequence, params: dk.ParameterSet,
           config: EncoderConfig) -> np.ndarray:
    """Query embeddings, one h-vector per sequence (mean over mask outputs)."""
    single = isinstance(sequences, TokenSequence)
    seqs = [sequences] if single else list(sequences)
    ids, attn_mask, pool = _batch_arrays(seqs, params.dtype)
    out = dk.forward(encoder_graph(config), params,
                     {"ids": ids, "attn_mask": attn_mask, "pool": pool})["query"]
    return out[0] if single else out


def mlm_logits(embedding: np.ndarray, table: AnswerTable) -> np.ndarray:
    if embedding.shape[-1] != table.embeddings.shape[1]:
        raise EncoderError("embedding width does not match answer table")
    return embedding @ table.embeddings.T + table.biases


def mlm_distribution(embedding: np.ndarray, table: AnswerTable) -> np.ndarray:
    z = mlm_logits(embedding, table)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class MlmExample:
    tokens: TokenSequence
    answer_id: str
    passage_id: str = ""


def train_mlm(examples: list[MlmExample], answers: list[str],
              config: EncoderConfig, hyper: TrainingHyper = TrainingHyper(),
              vocab: Vocab | None = None,
              val_examples: list[MlmExample] | None = None,
              log=None) -> MlmModel:
    """Cross-entropy training over the answer set; deterministic per seed."""
    if not examples:
        raise EncoderError("empty training corpus")
    answer_ids = tuple(sorted(answers))
    answer_index = {a: i for i, a in enumerate(answer_ids)}
    for ex in examples:
        if ex.answer_id not in answer_index:
            raise EncoderError(f"answer id {ex.answer_id!r} outside the answer set")

    params = init_encoder_params(config, list(answer_ids), seed=hyper.seed)
    graph = mlm_graph(config)
    opt = dk.AdamW(params, dk.AdamWConfig(lr=hyper.lr, weight_decay=hyper.weight_decay))
    rng = np.random.default_rng(hyper.seed)
    model = MlmModel(config, params, answer_ids, vocab or Vocab({"[PAD]": 0, "[UNK]": 1, "[MASK]": 2}))

    targets_all = np.array([answer_index[ex.answer_id] for ex in examples])
    best_val, best_arrays = math.inf, None
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(examples))
        epoch_loss = 0.0
        updates = 0
        t0 = time.perf_counter()
        for start in range(0, len(order), hyper.batch_size):
            rows = order[start:start + hyper.batch_size]
            batch = [examples[i].tokens for i in rows]
            ids, attn_mask, pool = _batch_arrays(batch, params.dtype)
            inputs = {"ids": ids, "attn_mask": attn_mask, "pool": pool,
                      "targets": targets_all[rows]}
            loss, grads = dk.loss_and_grads(graph, params, inputs)
            opt.step(params, grads)
            updates += 1
            epoch_loss += loss * len(rows)
        record = {"epoch": epoch, "train_loss": epoch_loss / len(examples),
                  "updates": updates, "seconds": time.perf_counter() - t0}
        if val_examples:
            record["val_loss"] = _eval_loss(graph, params, val_examples, answer_index,
                                            hyper.batch_size)
            if hyper.keep_best_val and record["val_loss"] < best_val:
                best_val = record["val_loss"]
                best_arrays = params.to_arrays()
        model.history.append(record)
        if log:
            print(f"[mlm] epoch {epoch} loss {record['train_loss']:.4f}"
                  + (f" val {record['val_loss']:.4f}" if "val_loss" in record else ""),
                  file=log)
    if hyper.keep_best_val and best_arrays is not None:
        params.load_arrays(best_arrays)
    return model


def _eval_loss(graph, params, examples, answer_index, batch_size) -> float:
    total = 0.0
    targets = np.array([answer_index[ex.answer_id] for ex in examples])
    for start in range(0, len(examples), batch_size):
        batch = examples[start:start + batch_size]
        ids, attn_mask, pool = _batch_arrays([e.tokens for e in batch], params.dtype)
        out = dk.forward(graph, params, {"ids": ids, "attn_mask": attn_mask,
                                         "pool": pool,
                                         "targets": targets[start:start + len(batch)]})
        total += float(out["loss"]) * len(batch)
    return total / len(examples)


def rank_answers_mlm(tokens: TokenSequence, model: MlmModel) -> RankedAnswerList:
    """Answers by descending probability; ties by ascending answer id."""
    q = encode(tokens, model.params, model.config)
    table = model.table
    probs = mlm_distribution(q, table)
    logits = mlm_logits(q, table)
    return rank_by_score(
        {a: float(logits[i]) for i, a in enumerate(table.answer_ids)},
        probs={a: float(probs[i]) for i, a in enumerate(table.answer_ids)})


# ---------------------------------------------------------------------------
# corpus embedding + on-disk format
# ---------------------------------------------------------------------------

EMB_MAGIC = b"R2EEMB1"


@dataclass(frozen=True)
class EmbeddedPassage:
    passage_id: str
    answer_id: str
    vector: np.ndarray


def embed_corpus(passages, model: MlmModel, batch_size: int = 64,
                 log=None) -> list[EmbeddedPassage]:
    """Embed masked passages in stable order; skips mask-free tokenizations."""
    out: list[EmbeddedPassage] = []
    todo = []
    for p in passages:
        seq = tokenize(p.masked_text, model.vocab)
        if not seq.mask_positions:
            print(f"warning: passage {p.passage_id} lost its mask to truncation",
                  file=log or sys.stderr)
            continue
        todo.append((p, seq))
    for start in range(0, len(todo), batch_size):
        chunk = todo[start:start + batch_size]
        vectors = encode([seq for _, seq in chunk], model.params, model.config)
        for (p, _), vec in zip(chunk, vectors):
            out.append(EmbeddedPassage(p.passage_id, p.answer_id,
                                       vec.astype(np.float32)))
    return out


def _write_str(f, s: str) -> None:
    raw = s.encode()
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)


def _read_str(buf, offset):
    (n,) = struct.unpack_from("<I", buf, offset)
    s = buf[offset + 4:offset + 4 + n].decode()
    return s, offset + 4 + n


def write_embedded_corpus(path, records: list[EmbeddedPassage]) -> None:
    if not records:
        h = 0
    else:
        h = records[0].vector.shape[0]
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<I", h))
        for r in records:
            if r.vector.shape != (h,):
                raise EncoderError(f"vector width mismatch for {r.passage_id!r}")
            _write_str(f, r.passage_id)
            _write_str(f, r.answer_id)
            f.write(np.ascontiguousarray(r.vector, dtype="<f4").tobytes())


def read_embedded_corpus(path) -> list[EmbeddedPassage]:
    buf = Path(path).read_bytes()
    if buf[:7] != EMB_MAGIC:
        raise EncoderError(f"{path}: bad magic, not an embedded corpus")
    (h,) = struct.unpack_from("<I", buf, 7)
    offset = 11
    out = []
    while offset < len(buf):
        pid, offset = _read_str(buf, offset)
        aid, offset = _read_str(buf, offset)
        vec = np.frombuffer(buf, dtype="<f4", count=h, offset=offset).copy()
        offset += 4 * h
        out.append(EmbeddedPassage(pid, aid, vec))
    return out
