"""Combining reader outputs: hybrid interpolation, majority vote, agreement.

Candidates are identified by :func:`unitedqa.text.normalize_answer`; the
string returned is the raw form of the candidate's first occurrence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

from .records import ReaderPrediction
from .text import normalize_answer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HybridWeights:
    tau: float = 0.6
    delta: float = 0.4

    def __post_init__(self):
        if self.tau < 0 or self.delta < 0 or self.tau + self.delta <= 0:
            raise ValueError("weights must be non-negative with a positive sum")


def _exact(w: float) -> Fraction:
    # decimal-style weights (0.6, 0.4, their multiples) compare exactly
    return Fraction(w).limit_denominator(10**6)


def hybrid_select(ext_preds: list, gen_preds: list, w: HybridWeights = HybridWeights()) -> str:
    """argmax_y tau * #{m: y == y^E_m} + delta * #{n: y == y^G_n}.

    Accepts raw strings or :class:`ReaderPrediction` objects. Ties go to the
    candidate that an extractive model produced, then to the lower model
    index. Empty answers are not candidates unless everything is empty.
    """
    ext = [p.answer if isinstance(p, ReaderPrediction) else p for p in ext_preds]
    gen = [p.answer if isinstance(p, ReaderPrediction) else p for p in gen_preds]
    if not ext and not gen:
        raise ValueError("need at least one prediction")
    tau, delta = _exact(w.tau), _exact(w.delta)
    score: dict[str, Fraction] = {}
    raw: dict[str, str] = {}
    for answers, weight in ((ext, tau), (gen, delta)):
        for a in answers:
            key = normalize_answer(a)
            if not key:
                continue
            raw.setdefault(key, a)
            score[key] = score.get(key, Fraction(0)) + weight
    if not score:
        log.warning("all predictions are empty; returning the empty string")
        return ""
    best = max(score.values())
    # dicts keep insertion order: extractive candidates first, each by model index
    return next(raw[k] for k, s in score.items() if s == best)


def majority_vote(preds: list) -> str:
    """Answer produced by at least two of three models, else the first model's."""
    answers = [p.answer if isinstance(p, ReaderPrediction) else p for p in preds]
    if len(answers) != 3:
        raise ValueError(f"majority vote needs exactly 3 predictions, got {len(answers)}")
    keys = [normalize_answer(a) for a in answers]
    for i, key in enumerate(keys):
        if keys.count(key) >= 2:
            return answers[i]
    return answers[0]


def agreement_ratio(preds_a: dict[str, str], preds_b: dict[str, str]) -> float:
    """Fraction of questions where both models give the same normalised answer."""
    if set(preds_a) != set(preds_b):
        diff = sorted(set(preds_a) ^ set(preds_b))
        raise ValueError(f"prediction maps cover different questions: {diff[:10]}")
    if not preds_a:
        raise ValueError("no questions to compare")
    same = sum(normalize_answer(preds_a[q]) == normalize_answer(preds_b[q]) for q in preds_a)
    return same / len(preds_a)
