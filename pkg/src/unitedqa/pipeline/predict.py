"""Batch prediction from one or more reader checkpoints."""

from __future__ import annotations

import logging
from pathlib import Path

from ..records import InputError, ReaderPrediction, load_dataset, write_jsonl
from ..retrieval import load_index
from .artifacts import load_reader, top_passages
from .config import RunConfig

log = logging.getLogger(__name__)


def predict_with(model, meta: dict, index, dataset, model_id: str, k: int) -> list[ReaderPrediction]:
    n = min(k, meta["passages"])
    if model.model_type == "generative":
        n = min(n, model.config.max_passages)
    out = []
    for ex in dataset:
        passages = top_passages(index, ex.question, n, ex.question_id)
        if not passages:
            log.warning("question %s: no passages retrieved; predicting the empty string", ex.question_id)
            out.append(ReaderPrediction(ex.question_id, "", model_id, model.model_type, 0.0))
            continue
        if model.model_type == "extractive":
            preds = model.predict(model.prepare(ex.question_id, ex.question, passages), 1, model_id)
            if not preds:
                log.warning("question %s: no candidate span; predicting the empty string", ex.question_id)
                preds = [ReaderPrediction(ex.question_id, "", model_id, "extractive", 0.0)]
            out.append(preds[0])
        else:
            out.append(model.greedy_decode(model.prepare(ex.question_id, ex.question, passages), model_id))
    return out


def predict_files(cfg: RunConfig, checkpoints: list, dataset_path=None, out=None, k: int | None = None) -> Path:
    """Write one JSON line per (checkpoint, question); model ids are checkpoint stems."""
    if not checkpoints:
        raise InputError("at least one checkpoint is required")
    cfg.require("index")
    dataset_path = Path(dataset_path) if dataset_path is not None else cfg.path("test")
    if not dataset_path.exists():
        raise InputError(f"dataset not found: {dataset_path}")
    dataset = load_dataset(dataset_path)
    index = load_index(cfg.path("index"))
    k = cfg.retrieval.k if k is None else k
    if k < 1:
        raise InputError("k must be >= 1")
    rows = []
    seen = set()
    for ckpt in checkpoints:
        model_id = Path(ckpt).stem
        if model_id in seen:
            raise InputError(f"duplicate model id {model_id!r} (checkpoint names must differ)")
        seen.add(model_id)
        model, meta = load_reader(ckpt)
        rows += [p.to_json() for p in predict_with(model, meta, index, dataset, model_id, k)]
    out = Path(out) if out is not None else cfg.path("outputs") / "predictions.jsonl"
    write_jsonl(out, rows)
    return out
