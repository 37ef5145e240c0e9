"""Exact match, retrieval accuracy and the breakdown / WH analyses."""

from __future__ import annotations

from collections import defaultdict

from .records import QAExample
from .retrieval import PassageIndex, RetrievalResult
from .text import normalize_answer, tokenize

WH_WORDS = ("what", "which", "when", "who", "how", "where")
UNDEFINED = None  # relative accuracy marker when overall EM is zero

BREAKDOWN_CATEGORIES = ("question_overlap", "no_question_overlap", "answer_overlap",
                        "answer_overlap_only", "no_overlap")


def exact_match(prediction: str, golds: list[str]) -> int:
    if not golds:
        raise ValueError("golds must be non-empty")
    p = normalize_answer(prediction)
    return int(any(p == normalize_answer(g) for g in golds))


def em_score(predictions: dict[str, str], dataset: list[QAExample]) -> float:
    if not dataset:
        raise ValueError("empty dataset")
    missing = [ex.question_id for ex in dataset if ex.question_id not in predictions]
    if missing:
        raise ValueError(f"missing predictions for question_ids: {missing}")
    return sum(exact_match(predictions[ex.question_id], ex.answers) for ex in dataset) / len(dataset)


def _contains(haystack: list[str], needle: list[str]) -> bool:
    n = len(needle)
    if n == 0:
        return False
    return any(haystack[i:i + n] == needle for i in range(len(haystack) - n + 1))


def has_answer(passage_text: str, golds: list[str]) -> bool:
    """Normalised-token contiguous containment of any gold answer."""
    hay = normalize_answer(passage_text).split()
    return any(_contains(hay, normalize_answer(g).split()) for g in golds)


def topk_retrieval_accuracy(retrievals: dict[str, RetrievalResult], dataset: list[QAExample],
                            k_values, index: PassageIndex) -> dict[int, float]:
    """Per k, fraction of questions with an answer-bearing passage in the top k."""
    k_values = sorted(set(int(k) for k in k_values))
    if not dataset:
        raise ValueError("empty dataset")
    depth_needed = k_values[-1]
    first_hit: list[float] = []
    for ex in dataset:
        res = retrievals.get(ex.question_id)
        if res is None:
            raise ValueError(f"no retrieval for question {ex.question_id!r}")
        if res.k < depth_needed:
            raise ValueError(f"retrieval depth {res.k} for {ex.question_id!r} is below k={depth_needed}")
        rank = next((r for r, pid in enumerate(res.passage_ids, 1)
                     if has_answer(index.passages[pid].text, ex.answers)), float("inf"))
        first_hit.append(rank)
    return {k: sum(r <= k for r in first_hit) / len(first_hit) for k in k_values}


def breakdown_populations(dataset: list[QAExample]) -> dict[str, list[QAExample]]:
    unannotated = [ex.question_id for ex in dataset if not ex.annotated]
    if unannotated:
        raise ValueError(f"missing overlap annotations for: {unannotated[:10]}")
    return {
        "question_overlap": [ex for ex in dataset if ex.question_overlap],
        "no_question_overlap": [ex for ex in dataset if not ex.question_overlap],
        "answer_overlap": [ex for ex in dataset if ex.answer_overlap],
        "answer_overlap_only": [ex for ex in dataset if ex.answer_overlap and not ex.question_overlap],
        "no_overlap": [ex for ex in dataset if not ex.question_overlap and not ex.answer_overlap],
    }


def breakdown_eval(predictions: dict[str, str], dataset: list[QAExample]) -> dict[str, dict]:
    """EM per overlap category; empty categories report ``em = None``."""
    out = {"total": {"count": len(dataset), "em": em_score(predictions, dataset)}}
    for name, subset in breakdown_populations(dataset).items():
        out[name] = {"count": len(subset), "em": em_score(predictions, subset) if subset else None}
    return out


def wh_category(question: str) -> str:
    toks = tokenize(question.lower())
    first = toks[0] if toks else ""
    return first if first in WH_WORDS else "other"


def wh_relative_accuracy(predictions: dict[str, str], dataset: list[QAExample]) -> dict[str, dict]:
    """(category EM - overall EM) / overall EM for each WH category present."""
    overall = em_score(predictions, dataset)
    groups: dict[str, list[QAExample]] = defaultdict(list)
    for ex in dataset:
        groups[wh_category(ex.question)].append(ex)
    out = {}
    for cat in (*WH_WORDS, "other"):
        if cat not in groups:
            continue
        em = em_score(predictions, groups[cat])
        rel = UNDEFINED if overall == 0 else (em - overall) / overall
        out[cat] = {"count": len(groups[cat]), "em": em, "relative": rel}
    return out
