"""Fusing prediction files: hybrid vote, majority vote or passthrough."""

from __future__ import annotations

from collections import OrderedDict
from fractions import Fraction
from pathlib import Path

from ..ensemble import HybridWeights, hybrid_select, majority_vote
from ..records import InputError, ReaderPrediction, load_predictions, write_jsonl
from ..text import normalize_answer


def group_by_model(files: list) -> "OrderedDict[str, dict[str, ReaderPrediction]]":
    """model_id -> {question_id: prediction}, in first-seen order."""
    models: OrderedDict[str, dict[str, ReaderPrediction]] = OrderedDict()
    for f in files:
        for p in load_predictions(f):
            per_q = models.setdefault(p.model_id, {})
            if p.question_id in per_q:
                raise InputError(f"{f}: model {p.model_id!r} predicts {p.question_id!r} twice")
            per_q[p.question_id] = p
    if not models:
        raise InputError("no predictions found")
    ref_id, ref = next(iter(models.items()))
    for mid, per_q in models.items():
        if set(per_q) != set(ref):
            only_a = sorted(set(ref) - set(per_q))
            only_b = sorted(set(per_q) - set(ref))
            raise InputError(f"question sets differ between {ref_id!r} and {mid!r}: "
                             f"only in {ref_id!r}: {only_a[:10]}, only in {mid!r}: {only_b[:10]}")
    return models


def routing(models) -> str:
    types = {next(iter(m.values())).model_type for m in models.values()}
    if len(models) == 1:
        return "passthrough"
    if len(types) == 1 and len(models) == 3:
        return "majority"
    return "hybrid"


def fuse(models, weights: HybridWeights, model_id: str | None = None) -> list[ReaderPrediction]:
    mode = routing(models)
    ids = list(models)
    questions = list(models[ids[0]])
    if mode == "passthrough":
        return [models[ids[0]][q] for q in questions]
    model_id = model_id or mode
    out = []
    for q in questions:
        preds = [models[m][q] for m in ids]
        if mode == "majority":
            answer = majority_vote(preds)
        else:
            ext = [p for p in preds if p.model_type == "extractive"]
            gen = [p for p in preds if p.model_type == "generative"]
            answer = hybrid_select(ext, gen, weights)
        key = normalize_answer(answer)
        voters = [p for p in preds if normalize_answer(p.answer) == key]
        ordered = sorted(voters, key=lambda p: p.model_type != "extractive")
        source = ordered[0] if ordered else preds[0]
        weight = {"extractive": Fraction(weights.tau).limit_denominator(10**6),
                  "generative": Fraction(weights.delta).limit_denominator(10**6)}
        score = float(sum(weight[p.model_type] for p in voters)) if mode == "hybrid" else float(len(voters))
        out.append(ReaderPrediction(q, answer, model_id, source.model_type, score))
    return out


def ensemble_files(files: list, out, weights: HybridWeights, model_id: str | None = None) -> tuple[Path, str]:
    if not files:
        raise InputError("at least one prediction file is required")
    models = group_by_model(files)
    fused = fuse(models, weights, model_id)
    write_jsonl(out, [p.to_json() for p in fused])
    return Path(out), routing(models)
