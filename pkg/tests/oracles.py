"""Independent reference implementations used as test oracles.

These avoid the package's own code paths: plain Python loops, ``math``
and fresh regexes, so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import math
import re
import string
from fractions import Fraction

import numpy as np


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Numerical gradient of scalar ``f(x)`` by central differences."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def softmax_list(xs: list[float]) -> list[float]:
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def normalize_ref(s: str) -> str:
    s = s.lower()
    s = "".join(" " if c in string.punctuation else c for c in s)
    words = [w for w in s.split() if w not in ("a", "an", "the")]
    return " ".join(words)


def words_ref(text: str) -> list[str]:
    return re.findall(r"\w+", text.lower())


def bm25_full_scan(texts: dict[str, str], query: str, k1: float = 1.2, b: float = 0.75) -> dict[str, float]:
    """Score every passage by looping over the raw texts."""
    docs = {pid: words_ref(t) for pid, t in texts.items()}
    n = len(docs)
    avg = sum(len(d) for d in docs.values()) / n
    out = {}
    terms = set(words_ref(query))
    for pid, d in docs.items():
        score = 0.0
        for t in terms:
            tf = d.count(t)
            if tf == 0:
                continue
            df = sum(1 for other in docs.values() if t in other)
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(d) / avg))
        out[pid] = score
    return out


def rank_full_scan(scores: dict[str, float], k: int) -> list[str]:
    return [pid for pid, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))][:k]


def hybrid_brute_force(ext: list[str], gen: list[str], tau: float, delta: float) -> str:
    """Enumerate every candidate, score it, apply the tie-break explicitly."""
    tau_q = Fraction(str(tau))
    delta_q = Fraction(str(delta))
    cands = {}
    for answers in (ext, gen):
        for a in answers:
            key = normalize_ref(a)
            if key and key not in cands:
                cands[key] = a
    if not cands:
        return ""
    best_key, best_rank = None, None
    for key in cands:
        score = tau_q * sum(normalize_ref(a) == key for a in ext) + delta_q * sum(normalize_ref(a) == key for a in gen)
        ext_idx = [i for i, a in enumerate(ext) if normalize_ref(a) == key]
        gen_idx = [i for i, a in enumerate(gen) if normalize_ref(a) == key]
        # higher score, then extractive-sourced, then lower model index
        rank = (score, 1 if ext_idx else 0, -(ext_idx[0] if ext_idx else gen_idx[0]))
        if best_rank is None or rank > best_rank:
            best_key, best_rank = key, rank
    return cands[best_key]


def hellinger_ref(p, q) -> float:
    return 0.5 * sum((math.sqrt(a) - math.sqrt(b)) ** 2 for a, b in zip(p, q))


def contains_ref(passage: str, answer: str) -> bool:
    hay = normalize_ref(passage).split()
    needle = normalize_ref(answer).split()
    if not needle:
        return False
    return any(hay[i:i + len(needle)] == needle for i in range(len(hay) - len(needle) + 1))


def adam_ref(p, g, m, v, t, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mhat = m / (1 - b1 ** t)
    vhat = v / (1 - b2 ** t)
    return p - lr * mhat / (math.sqrt(vhat) + eps), m, v
