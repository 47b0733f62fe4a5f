"""Exact per-answer top-k cosine retrieval over embedded evidence.

Rows are L2-normalized at build time so search reduces to an inner product;
queries are normalized at search time. Partitions are immutable after build
and safe to search from many threads.
"""

from __future__ import annotations

import hashlib
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import MaskedPassage
from .encoder import EmbeddedPassage

IDX_MAGIC = b"R2EIDX1"


class IndexError_(ValueError):
    pass


@dataclass(frozen=True)
class PassageRef:
    passage_id: str
    doc_id: str
    year: int
    source: str = ""


@dataclass(frozen=True)
class EvidenceHit:
    ref: PassageRef
    similarity: float
    row: int


class _Partition:
    __slots__ = ("vectors", "refs", "tie_order")

    def __init__(self, vectors: np.ndarray, refs: tuple[PassageRef, ...]):
        self.vectors = vectors
        self.refs = refs
        # Rank of each row when sorted by passage id; deterministic tie-break.
        order = sorted(range(len(refs)), key=lambda i: refs[i].passage_id)
        tie = np.empty(len(refs), dtype=np.int64)
        for rank, i in enumerate(order):
            tie[i] = rank
        self.tie_order = tie


def _normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0 or not np.isfinite(norm):
        raise IndexError_("zero-norm vector")
    return vec / norm


class AnswerPartitionIndex:
    """Per-answer matrices of normalized evidence embeddings + passage refs."""

    def __init__(self, h: int, partitions: dict[str, _Partition]):
        self.h = h
        self._parts = partitions

    @classmethod
    def build(cls, records: list[EmbeddedPassage],
              meta: dict[str, MaskedPassage] | None = None) -> "AnswerPartitionIndex":
        """meta (passage_id -> MaskedPassage) supplies doc/year/source refs."""
        if not records:
            return cls(0, {})
        h = records[0].vector.shape[0]
        grouped: dict[str, list[tuple[np.ndarray, PassageRef]]] = {}
        for r in records:
            if r.vector.shape != (h,):
                raise IndexError_(f"vector width mismatch for {r.passage_id!r}")
            norm = float(np.linalg.norm(r.vector))
            if norm == 0.0 or not np.isfinite(norm):
                raise IndexError_(f"zero-norm vector for passage {r.passage_id!r}")
            if meta is not None and r.passage_id in meta:
                m = meta[r.passage_id]
                ref = PassageRef(r.passage_id, m.doc_id, m.year, m.source)
            else:
                ref = PassageRef(r.passage_id, "", 0, "")
            grouped.setdefault(r.answer_id, []).append(
                ((r.vector / norm).astype(np.float32), ref))
        partitions = {}
        for answer_id in sorted(grouped):
            rows = grouped[answer_id]
            vectors = np.stack([v for v, _ in rows])
            partitions[answer_id] = _Partition(vectors, tuple(ref for _, ref in rows))
        return cls(h, partitions)

    def answer_ids(self) -> list[str]:
        return sorted(self._parts)

    def counts(self) -> dict[str, int]:
        return {a: len(p.refs) for a, p in sorted(self._parts.items())}

    def __contains__(self, answer_id: str) -> bool:
        return answer_id in self._parts

    def topk(self, answer_id: str, query: np.ndarray, k: int,
             year_max: int | None = None, source: str | None = None) -> list[EvidenceHit]:
        """Exact top-k by cosine, descending; ties by ascending passage id."""
        part = self._parts.get(answer_id)
        if part is None:
            raise IndexError_(f"unknown answer id {answer_id!r}")
        q = _normalize(np.asarray(query, dtype=np.float32))
        rows = np.arange(len(part.refs))
        if year_max is not None or source is not None:
            keep = np.ones(len(part.refs), dtype=bool)
            for i, ref in enumerate(part.refs):
                if year_max is not None and ref.year > year_max:
                    keep[i] = False
                if source is not None and ref.source != source:
                    keep[i] = False
            rows = rows[keep]
            if rows.size == 0:
                return []
        sims = part.vectors[rows] @ q
        order = np.lexsort((part.tie_order[rows], -sims))[:k]
        return [EvidenceHit(part.refs[rows[i]], float(sims[i]), int(rows[i]))
                for i in order]

    def topk_all(self, answer_ids, query: np.ndarray, k: int,
                 threads: int | None = None, year_max: int | None = None,
                 source: str | None = None) -> dict[str, list[EvidenceHit]]:
        """Per-answer top-k; result equals sequential topk per answer."""
        ids = list(answer_ids)
        missing = [a for a in ids if a not in self._parts]
        if missing:
            raise IndexError_(f"unknown answer ids {missing!r}")
        if threads is None or threads <= 1 or len(ids) <= 1:
            return {a: self.topk(a, query, k, year_max, source) for a in ids}
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = pool.map(
                lambda a: (a, self.topk(a, query, k, year_max, source)), ids)
            return dict(results)

    # -- serialization ------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(IDX_MAGIC)
            f.write(struct.pack("<II", self.h, len(self._parts)))
            for answer_id in sorted(self._parts):
                part = self._parts[answer_id]
                raw = answer_id.encode()
                f.write(struct.pack("<I", len(raw)))
                f.write(raw)
                f.write(struct.pack("<Q", len(part.refs)))
                f.write(np.ascontiguousarray(part.vectors, dtype="<f4").tobytes())
                for ref in part.refs:
                    for s in (ref.passage_id, ref.doc_id):
                        b = s.encode()
                        f.write(struct.pack("<I", len(b)))
                        f.write(b)
                    f.write(struct.pack("<I", ref.year))
                    b = ref.source.encode()
                    f.write(struct.pack("<I", len(b)))
                    f.write(b)

    @classmethod
    def load(cls, path) -> "AnswerPartitionIndex":
        buf = Path(path).read_bytes()
        if buf[:7] != IDX_MAGIC:
            raise IndexError_(f"{path}: bad magic, not an index file")
        h, n_answers = struct.unpack_from("<II", buf, 7)
        offset = 15
        partitions = {}
        for _ in range(n_answers):
            (n,) = struct.unpack_from("<I", buf, offset)
            offset += 4
            answer_id = buf[offset:offset + n].decode()
            offset += n
            (count,) = struct.unpack_from("<Q", buf, offset)
            offset += 8
            vectors = np.frombuffer(buf, dtype="<f4", count=count * h,
                                    offset=offset).reshape(count, h).copy()
            offset += 4 * count * h
            refs = []
            for _ in range(count):
                fields = []
                for _ in range(2):
                    (m,) = struct.unpack_from("<I", buf, offset)
                    offset += 4
                    fields.append(buf[offset:offset + m].decode())
                    offset += m
                (year,) = struct.unpack_from("<I", buf, offset)
                offset += 4
                (m,) = struct.unpack_from("<I", buf, offset)
                offset += 4
                source = buf[offset:offset + m].decode()
                offset += m
                refs.append(PassageRef(fields[0], fields[1], year, source))
            partitions[answer_id] = _Partition(vectors, tuple(refs))
        return cls(h, partitions)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for answer_id in sorted(self._parts):
            part = self._parts[answer_id]
            digest.update(answer_id.encode())
            digest.update(np.ascontiguousarray(part.vectors, dtype="<f4").tobytes())
            for ref in part.refs:
                digest.update(repr((ref.passage_id, ref.doc_id, ref.year,
                                    ref.source)).encode())
        return digest.hexdigest()


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
