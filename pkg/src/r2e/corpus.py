"""Masked entity-linked corpus construction.

Raw sentences are linked against an answer dictionary, duplicated once per
distinct linked entity with that entity's mentions replaced by the mask
token, split at document level, and tokenized to fixed-length sequences.
"""

from __future__ import annotations

import csv
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MASK_TOKEN = "[MASK]"
PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
SEQUENCE_LENGTH = 128

_WORD_RE = re.compile(r"\[MASK\]|\w+|[^\w\s]")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class EntityDictionary:
    """Surface form (case-normalized) -> entity id."""

    surface_to_id: dict[str, str]

    def __post_init__(self):
        if not self.surface_to_id:
            raise CorpusError("entity dictionary is empty")
        for surface in self.surface_to_id:
            if not surface.strip():
                raise CorpusError("empty surface form in dictionary")

    @classmethod
    def from_pairs(cls, pairs) -> "EntityDictionary":
        return cls({surface.lower(): entity for entity, surface in pairs})

    @property
    def entity_ids(self) -> list[str]:
        return sorted(set(self.surface_to_id.values()))

    def surfaces_of(self, entity_id: str) -> list[str]:
        return sorted(s for s, e in self.surface_to_id.items() if e == entity_id)


@dataclass(frozen=True)
class RawDocument:
    doc_id: str
    year: int
    sentences: tuple[str, ...]

    def __post_init__(self):
        if self.year <= 0:
            raise CorpusError(f"document {self.doc_id!r} has non-positive year")


@dataclass(frozen=True)
class MaskedPassage:
    passage_id: str
    answer_id: str
    masked_text: str
    doc_id: str
    year: int
    source: str = ""

    def __post_init__(self):
        if MASK_TOKEN not in self.masked_text:
            raise CorpusError(f"passage {self.passage_id!r} has no mask token")


@dataclass(frozen=True)
class Mention:
    entity_id: str
    start: int
    end: int


def _compile_dictionary(dictionary: EntityDictionary) -> re.Pattern:
    # Longest surface first so the alternation realizes greedy longest-match.
    surfaces = sorted(dictionary.surface_to_id, key=len, reverse=True)
    body = "|".join(re.escape(s) for s in surfaces)
    return re.compile(rf"\b(?:{body})\b", re.IGNORECASE)


def link_entities(sentence: str, dictionary: EntityDictionary,
                  _pattern: re.Pattern | None = None) -> list[Mention]:
    """Non-overlapping left-to-right longest matches, case-insensitive."""
    pattern = _pattern if _pattern is not None else _compile_dictionary(dictionary)
    mentions = []
    for m in pattern.finditer(sentence):
        entity = dictionary.surface_to_id[m.group(0).lower()]
        mentions.append(Mention(entity, m.start(), m.end()))
    return mentions


def make_masked_examples(sentence: str, mentions: list[Mention], *,
                         doc_id: str, year: int, sent_idx: int,
                         source: str = "") -> list[MaskedPassage]:
    """One masked copy per distinct entity; all its mentions become the mask."""
    out = []
    for entity in sorted({m.entity_id for m in mentions}):
        spans = [m for m in mentions if m.entity_id == entity]
        text = []
        cursor = 0
        for m in sorted(spans, key=lambda m: m.start):
            text.append(sentence[cursor:m.start])
            text.append(MASK_TOKEN)
            cursor = m.end
        text.append(sentence[cursor:])
        out.append(MaskedPassage(
            passage_id=f"{doc_id}:{sent_idx}:{entity}",
            answer_id=entity,
            masked_text="".join(text),
            doc_id=doc_id,
            year=year,
            source=source,
        ))
    return out


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

SPLIT_NAMES = ("S1", "S2", "S3")


@dataclass(frozen=True)
class TemporalPolicy:
    split_year: int
    s2_fraction: float = 0.2
    seed: int = 0


@dataclass(frozen=True)
class RandomPolicy:
    sizes: tuple[int, int, int]
    seed: int = 0


@dataclass(frozen=True)
class CorpusSplits:
    assignment: dict[str, str]
    policy: TemporalPolicy | RandomPolicy

    def doc_ids(self, split: str) -> list[str]:
        return sorted(d for d, s in self.assignment.items() if s == split)

    def sizes(self) -> dict[str, int]:
        counts = Counter(self.assignment.values())
        return {name: counts.get(name, 0) for name in SPLIT_NAMES}


def build_splits(docs: list[RawDocument], policy) -> CorpusSplits:
    doc_ids = [d.doc_id for d in docs]
    if len(set(doc_ids)) != len(doc_ids):
        raise CorpusError("duplicate doc ids")
    assignment: dict[str, str] = {}
    if isinstance(policy, TemporalPolicy):
        early = sorted(d.doc_id for d in docs if d.year < policy.split_year)
        late = sorted(d.doc_id for d in docs if d.year >= policy.split_year)
        rng = np.random.default_rng(policy.seed)
        shuffled = list(early)
        rng.shuffle(shuffled)
        n_s2 = int(round(policy.s2_fraction * len(shuffled)))
        for doc_id in shuffled[:n_s2]:
            assignment[doc_id] = "S2"
        for doc_id in shuffled[n_s2:]:
            assignment[doc_id] = "S1"
        for doc_id in late:
            assignment[doc_id] = "S3"
    elif isinstance(policy, RandomPolicy):
        if sum(policy.sizes) != len(docs):
            raise CorpusError(
                f"split sizes {policy.sizes} do not sum to {len(docs)} docs")
        rng = np.random.default_rng(policy.seed)
        shuffled = sorted(doc_ids)
        rng.shuffle(shuffled)
        n1, n2, _ = policy.sizes
        for i, doc_id in enumerate(shuffled):
            assignment[doc_id] = "S1" if i < n1 else ("S2" if i < n1 + n2 else "S3")
    else:
        raise CorpusError(f"unknown split policy {policy!r}")
    return CorpusSplits(assignment, policy)


# ---------------------------------------------------------------------------
# label cleaning & templating
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TemplateRecord:
    entity_id: str
    label: str
    source: str = ""

    def __post_init__(self):
        if not self.label.strip():
            raise CorpusError("template record with empty label")


def clean_label(raw: str) -> str:
    """Lowercase, split on commas, reverse the segments, re-join with spaces."""
    if not raw.strip():
        raise CorpusError("empty label")
    parts = [p.strip() for p in raw.lower().split(",")]
    return " ".join(" ".join(reversed(parts)).split())


DEFAULT_TEMPLATE = "[MASK] is genetically associated with {label}."


def template_records(records: list[TemplateRecord],
                     template: str = DEFAULT_TEMPLATE) -> list[MaskedPassage]:
    if MASK_TOKEN not in template or "{label}" not in template:
        raise CorpusError("template must contain the mask token and {label}")
    out = []
    for i, rec in enumerate(records):
        text = template.format(label=clean_label(rec.label))
        out.append(MaskedPassage(
            passage_id=f"tmpl:{rec.source or 'records'}:{i}",
            answer_id=rec.entity_id,
            masked_text=text,
            doc_id=f"tmpl:{rec.source or 'records'}",
            year=0,  # templated rows carry no year; sorts before any cutoff
            source=rec.source,
        ))
    return out


# ---------------------------------------------------------------------------
# tokenization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Vocab:
    token_to_id: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK_TOKEN]

    @property
    def mask_id(self) -> int:
        return self.token_to_id[MASK_TOKEN]

    def save(self, path) -> None:
        ordered = sorted(self.token_to_id, key=self.token_to_id.get)
        Path(path).write_text(json.dumps(ordered, indent=0) + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        ordered = json.loads(Path(path).read_text())
        return cls({tok: i for i, tok in enumerate(ordered)})


def split_words(text: str) -> list[str]:
    """Word/punctuation tokens; the mask token survives as one unit."""
    return [t if t == MASK_TOKEN else t.lower() for t in _WORD_RE.findall(text)]


def build_vocab(texts, min_count: int = 1) -> Vocab:
    counts = Counter()
    for text in texts:
        for tok in split_words(text):
            if tok != MASK_TOKEN:
                counts[tok] += 1
    table = {PAD_TOKEN: 0, UNK_TOKEN: 1, MASK_TOKEN: 2}
    for tok, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if counts[tok] >= min_count:
            table[tok] = len(table)
    return Vocab(table)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    mask_positions: tuple[int, ...]
    valid_length: int
    dropped_masks: int = 0

    def __post_init__(self):
        if len(self.ids) != SEQUENCE_LENGTH:
            raise CorpusError("token sequence must be exactly the fixed length")
        if any(p >= self.valid_length for p in self.mask_positions):
            raise CorpusError("mask position beyond valid length")


def tokenize(text: str, vocab: Vocab) -> TokenSequence:
    words = split_words(text)
    dropped = sum(1 for w in words[SEQUENCE_LENGTH:] if w == MASK_TOKEN)
    words = words[:SEQUENCE_LENGTH]
    ids = [vocab.token_to_id.get(w, vocab.unk_id) for w in words]
    masks = tuple(i for i, w in enumerate(words) if w == MASK_TOKEN)
    valid = len(ids)
    ids.extend([vocab.pad_id] * (SEQUENCE_LENGTH - valid))
    return TokenSequence(tuple(ids), masks, valid, dropped)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def read_documents(path) -> list[RawDocument]:
    """JSON-lines, one object per sentence: doc_id, year, sent_idx, text."""
    rows: dict[str, list[tuple[int, str, int]]] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rows.setdefault(obj["doc_id"], []).append(
                    (int(obj["sent_idx"]), obj["text"], int(obj["year"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise CorpusError(f"{path}:{lineno}: bad document line: {e}") from e
    docs = []
    for doc_id in sorted(rows):
        entries = sorted(rows[doc_id])
        years = {y for _, _, y in entries}
        if len(years) != 1:
            raise CorpusError(f"document {doc_id!r} has inconsistent years {sorted(years)}")
        docs.append(RawDocument(doc_id, years.pop(), tuple(t for _, t, _ in entries)))
    return docs


def read_dictionary(path) -> EntityDictionary:
    """Tab-separated entity_id<TAB>surface_form, one pair per line."""
    pairs = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusError(f"{path}:{lineno}: expected entity_id<TAB>surface")
            pairs.append((parts[0], parts[1]))
    return EntityDictionary.from_pairs(pairs)


def read_template_records(path) -> list[TemplateRecord]:
    """CSV rows: entity_id, label, source."""
    out = []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if len(row) < 2:
                raise CorpusError(f"{path}:{lineno}: expected entity_id,label[,source]")
            out.append(TemplateRecord(row[0], row[1], row[2] if len(row) > 2 else ""))
    return out


def write_masked_corpus(path, passages: list[MaskedPassage]) -> None:
    with open(path, "w") as f:
        for p in passages:
            obj = {"passage_id": p.passage_id, "answer_id": p.answer_id,
                   "masked_text": p.masked_text, "doc_id": p.doc_id, "year": p.year}
            if p.source:
                obj["source"] = p.source
            f.write(json.dumps(obj, sort_keys=True) + "\n")


def read_masked_corpus(path) -> list[MaskedPassage]:
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(MaskedPassage(
                    obj["passage_id"], obj["answer_id"], obj["masked_text"],
                    obj["doc_id"], int(obj["year"]), obj.get("source", "")))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise CorpusError(f"{path}:{lineno}: bad passage line: {e}") from e
    return out


@dataclass
class BuiltCorpus:
    passages: list[MaskedPassage]
    splits: CorpusSplits
    dictionary: EntityDictionary
    counts_by_split: dict[str, Counter] = field(default_factory=dict)

    def passages_in(self, split: str) -> list[MaskedPassage]:
        return [p for p in self.passages if self.splits.assignment.get(p.doc_id) == split]


def build_corpus(docs: list[RawDocument], dictionary: EntityDictionary,
                 policy) -> BuiltCorpus:
    """Link, mask, and split; passages ordered by (doc_id, sent_idx, answer)."""
    pattern = _compile_dictionary(dictionary)
    passages: list[MaskedPassage] = []
    for doc in sorted(docs, key=lambda d: d.doc_id):
        for sent_idx, sentence in enumerate(doc.sentences):
            mentions = link_entities(sentence, dictionary, _pattern=pattern)
            if not mentions:
                continue
            passages.extend(make_masked_examples(
                sentence, mentions, doc_id=doc.doc_id, year=doc.year,
                sent_idx=sent_idx))
    splits = build_splits(docs, policy)
    counts: dict[str, Counter] = {name: Counter() for name in SPLIT_NAMES}
    for p in passages:
        counts[splits.assignment[p.doc_id]][p.answer_id] += 1
    return BuiltCorpus(passages, splits, dictionary, counts)


def save_splits(path, splits: CorpusSplits) -> None:
    if isinstance(splits.policy, TemporalPolicy):
        policy = {"kind": "temporal", "split_year": splits.policy.split_year,
                  "s2_fraction": splits.policy.s2_fraction, "seed": splits.policy.seed}
    else:
        policy = {"kind": "random", "sizes": list(splits.policy.sizes),
                  "seed": splits.policy.seed}
    Path(path).write_text(json.dumps(
        {"policy": policy, "assignment": splits.assignment}, sort_keys=True, indent=0) + "\n")


def load_splits(path) -> CorpusSplits:
    obj = json.loads(Path(path).read_text())
    p = obj["policy"]
    if p["kind"] == "temporal":
        policy = TemporalPolicy(p["split_year"], p["s2_fraction"], p["seed"])
    else:
        policy = RandomPolicy(tuple(p["sizes"]), p["seed"])
    return CorpusSplits(obj["assignment"], policy)
