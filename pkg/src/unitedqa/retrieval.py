"""Passage splitting, inverted index and BM25 ranking.

Scoring uses Robertson BM25 with ``k1=1.2``, ``b=0.75`` and the
non-negative idf ``ln(1 + (N - df + 0.5) / (df + 0.5))``. Terms are the
lowercased word tokens of :func:`unitedqa.text.bow_tokens`; the query side is
deduplicated.

Index file layout::

    bytes 0..7   magic b"UQAIDX\\x00\\x00"
    bytes 8..11  uint32 format version (little-endian), currently 1
    bytes 12..19 uint64 payload length
    payload      UTF-8 JSON with sorted keys: {"b", "k1", "passages": [...], "postings": {...}}
"""

from __future__ import annotations

import json
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .checkpoint import atomic_write_bytes
from .records import InputError, Passage, read_jsonl
from .text import bow_tokens

INDEX_MAGIC = b"UQAIDX\x00\x00"
INDEX_VERSION = 1


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    text: str


def load_corpus(path) -> list[Document]:
    docs = []
    for i, row in enumerate(read_jsonl(path), 1):
        missing = [k for k in ("id", "title", "text") if k not in row]
        if missing:
            raise InputError(f"{path}: record {i}: missing field(s) {missing}")
        docs.append(Document(str(row["id"]), str(row["title"]), str(row["text"])))
    return docs


def split_passages(document: Document, width: int = 100) -> list[Passage]:
    """Disjoint consecutive windows of ``width`` whitespace words."""
    if width < 1:
        raise ValueError("width must be >= 1")
    words = document.text.split()
    out = []
    for n, start in enumerate(range(0, len(words), width)):
        chunk = words[start:start + width]
        out.append(Passage(f"{document.id}-{n}", document.id, document.title, chunk, " ".join(chunk)))
    return out


@dataclass
class RetrievalResult:
    question_id: str
    hits: list[tuple[str, float]]
    k: int

    @property
    def passage_ids(self) -> list[str]:
        return [pid for pid, _ in self.hits]


@dataclass
class PassageIndex:
    """Immutable after :func:`build_index`; safe to share between threads."""

    passages: dict[str, Passage]
    postings: dict[str, list[tuple[str, int]]]
    lengths: dict[str, int]
    k1: float = 1.2
    b: float = 0.75
    df: dict[str, int] = field(init=False)
    avg_length: float = field(init=False)
    _order: list[str] = field(init=False, repr=False)
    _tf: dict[str, dict[str, int]] = field(init=False, repr=False)

    def __post_init__(self):
        self.df = {t: len(p) for t, p in self.postings.items()}
        self._order = sorted(self.passages)
        self.avg_length = (sum(self.lengths.values()) / len(self.lengths)) if self.lengths else 0.0
        self._tf = {t: dict(p) for t, p in self.postings.items()}

    @property
    def num_passages(self) -> int:
        return len(self.passages)

    def idf(self, term: str) -> float:
        n, df = self.num_passages, self.df.get(term, 0)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def term_weight(self, tf: int, length: int) -> float:
        k1, b = self.k1, self.b
        return tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * length / self.avg_length))


def build_index(passages: list[Passage], k1: float = 1.2, b: float = 0.75) -> PassageIndex:
    by_id: dict[str, Passage] = {}
    for p in passages:
        if p.passage_id in by_id:
            raise InputError(f"duplicate passage_id {p.passage_id!r}")
        by_id[p.passage_id] = p
    postings: dict[str, list[tuple[str, int]]] = {}
    lengths = {}
    for pid in sorted(by_id):
        terms = bow_tokens(by_id[pid].text)
        lengths[pid] = len(terms)
        for term, tf in sorted(Counter(terms).items()):
            postings.setdefault(term, []).append((pid, tf))
    return PassageIndex(by_id, dict(sorted(postings.items())), lengths, k1, b)


def _query_terms(question) -> list[str]:
    toks = bow_tokens(question) if isinstance(question, str) else [t.lower() for t in question]
    return sorted(set(toks))


def bm25_score(index: PassageIndex, question_tokens, passage_id: str) -> float:
    if passage_id not in index.passages:
        raise ValueError(f"unknown passage {passage_id!r}")
    score = 0.0
    length = index.lengths[passage_id]
    for term in _query_terms(question_tokens):
        tf = index._tf.get(term, {}).get(passage_id, 0)
        if tf:
            score += index.idf(term) * index.term_weight(tf, length)
    return score


def retrieve(index: PassageIndex, question, k: int = 100, question_id: str = "") -> RetrievalResult:
    """Top-k passages by BM25; equal scores fall back to ascending passage_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.passages:
        return RetrievalResult(question_id, [], k)
    pos = {pid: n for n, pid in enumerate(index._order)}
    scores = np.zeros(len(index._order))
    for term in _query_terms(question):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for pid, tf in plist:
            scores[pos[pid]] += idf * index.term_weight(tf, index.lengths[pid])
    # lexsort: last key is primary; index order already sorts passage_ids ascending
    order = np.lexsort((np.arange(len(scores)), -scores))[:k]
    return RetrievalResult(question_id, [(index._order[i], float(scores[i])) for i in order], k)


class Retriever(Protocol):
    def retrieve(self, question: str, k: int, question_id: str = "") -> RetrievalResult: ...


class BM25Retriever:
    def __init__(self, index: PassageIndex):
        self.index = index

    def retrieve(self, question: str, k: int = 100, question_id: str = "") -> RetrievalResult:
        return retrieve(self.index, question, k, question_id)


def dumps_index(index: PassageIndex) -> bytes:
    payload = {
        "k1": index.k1,
        "b": index.b,
        "passages": [
            {"passage_id": p.passage_id, "source_doc_id": p.source_doc_id, "title": p.title, "text": p.text}
            for p in (index.passages[pid] for pid in index._order)
        ],
        "postings": {t: [[pid, tf] for pid, tf in plist] for t, plist in index.postings.items()},
    }
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return INDEX_MAGIC + struct.pack("<IQ", INDEX_VERSION, len(body)) + body


def loads_index(data: bytes) -> PassageIndex:
    if data[:8] != INDEX_MAGIC:
        raise InputError("not an index file (bad magic)")
    version, n = struct.unpack("<IQ", data[8:20])
    if version != INDEX_VERSION:
        raise InputError(f"unsupported index version {version}")
    payload = json.loads(data[20:20 + n].decode("utf-8"))
    passages = {}
    for row in payload["passages"]:
        words = row["text"].split()
        passages[row["passage_id"]] = Passage(row["passage_id"], row["source_doc_id"], row["title"], words, row["text"])
    postings = {t: [(pid, int(tf)) for pid, tf in plist] for t, plist in payload["postings"].items()}
    lengths = {pid: len(bow_tokens(p.text)) for pid, p in passages.items()}
    return PassageIndex(passages, postings, lengths, float(payload["k1"]), float(payload["b"]))


def save_index(index: PassageIndex, path) -> None:
    atomic_write_bytes(Path(path), dumps_index(index))


def load_index(path) -> PassageIndex:
    return loads_index(Path(path).read_bytes())
