"""Tokenisation, vocabulary and answer normalisation shared by every module."""

from __future__ import annotations

import re
import string
from collections.abc import Iterable

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_ARTICLES = frozenset({"a", "an", "the"})
_PUNCT = set(string.punctuation)

PAD, CLS, SEP, UNK, BOS, EOS = "[PAD]", "[CLS]", "[SEP]", "[UNK]", "[BOS]", "[EOS]"
SPECIAL_TOKENS = (PAD, CLS, SEP, UNK, BOS, EOS)


def tokenize(text: str) -> list[str]:
    """Split into word and single-punctuation tokens, keeping surface case."""
    return _TOKEN_RE.findall(text)


def bow_tokens(text: str) -> list[str]:
    """Lowercased word tokens with punctuation dropped (retrieval view)."""
    return [t.lower() for t in _TOKEN_RE.findall(text) if not _is_punct(t)]


def _is_punct(tok: str) -> bool:
    return not any(ch.isalnum() or ch == "_" for ch in tok)


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation and the articles a/an/the, squeeze whitespace."""
    s = s.lower()
    s = "".join(ch if ch not in _PUNCT else " " for ch in s)
    return " ".join(w for w in s.split() if w not in _ARTICLES)


class Vocab:
    """Lowercased token <-> id map. Special tokens occupy ids 0..5."""

    def __init__(self, tokens: Iterable[str]):
        self.itos: list[str] = list(SPECIAL_TOKENS)
        seen = set(self.itos)
        for tok in tokens:
            if tok not in seen:
                seen.add(tok)
                self.itos.append(tok)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        words = set()
        for text in texts:
            words.update(t.lower() for t in tokenize(text))
        return cls(sorted(words - set(SPECIAL_TOKENS)))

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi or tok.lower() in self.stoi

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def cls_id(self) -> int:
        return 1

    @property
    def sep_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    @property
    def bos_id(self) -> int:
        return 4

    @property
    def eos_id(self) -> int:
        return 5

    def id(self, tok: str) -> int:
        i = self.stoi.get(tok)
        return i if i is not None else self.stoi.get(tok.lower(), self.unk_id)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: list[str]) -> "Vocab":
        if tuple(itos[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary does not start with the special tokens")
        return cls(itos[len(SPECIAL_TOKENS):])
