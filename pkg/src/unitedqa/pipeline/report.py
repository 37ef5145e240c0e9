"""Multi-seed report: EM medians, breakdown and WH tables, top-k curve, agreement.

The JSON document follows :data:`REPORT_SCHEMA`; a plain-text rendering is
written next to it. Nothing time-dependent is included, so equal inputs
give byte-identical reports.
"""

from __future__ import annotations

import json
import re
import statistics
from pathlib import Path

import jsonschema

from ..checkpoint import atomic_write_bytes
from ..ensemble import agreement_ratio
from ..evaluation import (BREAKDOWN_CATEGORIES, breakdown_eval, em_score, topk_retrieval_accuracy,
                          wh_relative_accuracy)
from ..records import InputError, load_dataset
from ..retrieval import load_index, retrieve
from .artifacts import dumps_json
from .config import RunConfig
from .fusion import group_by_model

_rate = {"type": "number", "minimum": 0, "maximum": 1}
_rate_or_null = {"anyOf": [_rate, {"type": "null"}]}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["dataset", "systems", "models", "training", "retrieval", "agreement"],
    "additionalProperties": False,
    "properties": {
        "dataset": {
            "type": "object",
            "required": ["name", "questions", "annotated"],
            "properties": {"name": {"type": "string"}, "questions": {"type": "integer", "minimum": 1},
                           "annotated": {"type": "boolean"}},
        },
        "systems": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["members", "median_em"],
                "properties": {"members": {"type": "object", "additionalProperties": _rate},
                               "median_em": _rate},
            },
        },
        "models": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["model_type", "em", "breakdown", "wh"],
                "properties": {
                    "model_type": {"enum": ["extractive", "generative"]},
                    "em": _rate,
                    "breakdown": {"anyOf": [{"type": "null"}, {
                        "type": "object",
                        "additionalProperties": {
                            "type": "object", "required": ["count", "em"],
                            "properties": {"count": {"type": "integer", "minimum": 0}, "em": _rate_or_null}}}]},
                    "wh": {"type": "object", "additionalProperties": {
                        "type": "object", "required": ["count", "em", "relative"],
                        "properties": {"count": {"type": "integer", "minimum": 1}, "em": _rate,
                                       "relative": {"type": ["number", "null"]}}}},
                },
            },
        },
        "training": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["seeds", "median_dev_em"],
                "properties": {
                    "seeds": {"type": "object", "additionalProperties": {
                        "type": "object", "required": ["best_dev_em", "best_epoch"],
                        "properties": {"best_dev_em": _rate, "best_epoch": {"type": "integer"},
                                       "selected_gamma": {"type": "number"}}}},
                    "median_dev_em": _rate,
                },
            },
        },
        "retrieval": {
            "type": "object",
            "required": ["k_values", "accuracy"],
            "properties": {"k_values": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                           "accuracy": {"type": "object", "additionalProperties": _rate}},
        },
        "agreement": {
            "type": "object",
            "required": ["models", "matrix"],
            "properties": {"models": {"type": "array", "items": {"type": "string"}},
                           "matrix": {"type": "array", "items": {"type": "array", "items": _rate}}},
        },
    },
}

_SEED_RE = re.compile(r"-seed\d+\b.*$")


def system_name(model_id: str) -> str:
    """Model id with its ``-seed<N>`` suffix removed."""
    return _SEED_RE.sub("", model_id)


def validate_report(report: dict) -> None:
    jsonschema.validate(report, REPORT_SCHEMA)


def build_report(cfg: RunConfig, manifests: list, prediction_files: list, dataset_path) -> dict:
    dataset = load_dataset(dataset_path)
    if not dataset:
        raise InputError(f"{dataset_path}: empty dataset")
    annotated = all(ex.annotated for ex in dataset)
    models = group_by_model(prediction_files) if prediction_files else {}
    per_model = {}
    answers = {}
    for mid, per_q in models.items():
        preds = {q: p.answer for q, p in per_q.items()}
        answers[mid] = preds
        per_model[mid] = {
            "model_type": next(iter(per_q.values())).model_type,
            "em": em_score(preds, dataset),
            "breakdown": breakdown_eval(preds, dataset) if annotated else None,
            "wh": wh_relative_accuracy(preds, dataset),
        }
    systems: dict[str, dict] = {}
    for mid, m in per_model.items():
        systems.setdefault(system_name(mid), {"members": {}})["members"][mid] = m["em"]
    for s in systems.values():
        s["median_em"] = statistics.median(s["members"].values())

    training: dict[str, dict] = {}
    for path in manifests:
        try:
            man = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read manifest {path}: {exc}") from None
        entry = training.setdefault(man["reader"], {"seeds": {}})
        for seed, metrics in man["metrics"].items():
            rec = {"best_dev_em": metrics["best_dev_em"], "best_epoch": metrics["best_epoch"]}
            if "selected_gamma" in man:
                rec["selected_gamma"] = man["selected_gamma"]
            entry["seeds"][seed] = rec
    for entry in training.values():
        entry["median_dev_em"] = statistics.median(r["best_dev_em"] for r in entry["seeds"].values())

    cfg.require("index")
    index = load_index(cfg.path("index"))
    k_values = sorted(set(cfg.retrieval.k_values))
    depth = max(k_values)
    retrievals = {ex.question_id: retrieve(index, ex.question, depth, ex.question_id) for ex in dataset}
    curve = topk_retrieval_accuracy(retrievals, dataset, k_values, index) if index.passages else \
        {k: 0.0 for k in k_values}

    ids = list(answers)
    matrix = [[agreement_ratio(answers[a], answers[b]) for b in ids] for a in ids]
    report = {
        "dataset": {"name": Path(dataset_path).name, "questions": len(dataset), "annotated": annotated},
        "systems": systems,
        "models": per_model,
        "training": training,
        "retrieval": {"k_values": k_values, "accuracy": {str(k): v for k, v in curve.items()}},
        "agreement": {"models": ids, "matrix": matrix},
    }
    validate_report(report)
    return report


_SHORT = {"total": "total", "question_overlap": "QO", "no_question_overlap": "no-QO",
          "answer_overlap": "AO", "answer_overlap_only": "AO-only", "no_overlap": "none"}


def _fmt(x) -> str:
    return "-" if x is None else f"{100 * x:.1f}"


def render_text(report: dict) -> str:
    lines = [f"Dataset: {report['dataset']['name']} ({report['dataset']['questions']} questions)", ""]
    lines.append("Exact match (median across seeds)")
    lines.append(f"  {'system':<24}{'seeds':>6}{'EM':>8}")
    for name, s in report["systems"].items():
        lines.append(f"  {name:<24}{len(s['members']):>6}{_fmt(s['median_em']):>8}")
    if report["training"]:
        lines += ["", "Best dev EM during training"]
        for reader, t in report["training"].items():
            seeds = ", ".join(f"{s}:{_fmt(r['best_dev_em'])}" for s, r in t["seeds"].items())
            lines.append(f"  {reader:<24}median {_fmt(t['median_dev_em'])}  ({seeds})")
    lines += ["", "Top-k retrieval accuracy"]
    lines.append("  " + "".join(f"{'top-' + str(k):>9}" for k in report["retrieval"]["k_values"]))
    lines.append("  " + "".join(f"{_fmt(v):>9}" for v in report["retrieval"]["accuracy"].values()))
    annotated = [(m, d) for m, d in report["models"].items() if d["breakdown"] is not None]
    if annotated:
        lines += ["", "Breakdown EM"]
        cols = ("total",) + BREAKDOWN_CATEGORIES
        lines.append(f"  {'model':<24}" + "".join(f"{_SHORT[c]:>9}" for c in cols))
        for mid, d in annotated:
            lines.append(f"  {mid:<24}" + "".join(f"{_fmt(d['breakdown'][c]['em']):>9}" for c in cols))
        lines.append("  (QO question overlap, AO answer overlap, AO-only = AO without QO)")
    if report["models"]:
        lines += ["", "WH relative accuracy (%)"]
        cats = sorted({c for d in report["models"].values() for c in d["wh"]})
        lines.append(f"  {'model':<24}" + "".join(f"{c:>8}" for c in cats))
        for mid, d in report["models"].items():
            cells = []
            for c in cats:
                rel = d["wh"].get(c, {}).get("relative")
                cells.append(f"{'-' if rel is None else f'{100 * rel:+.1f}':>8}")
            lines.append(f"  {mid:<24}" + "".join(cells))
        ids = report["agreement"]["models"]
        lines += ["", "Pairwise agreement"]
        lines.append(f"  {'':<24}" + "".join(f"{i:>6}" for i in range(len(ids))))
        for i, (mid, row) in enumerate(zip(ids, report["agreement"]["matrix"])):
            lines.append(f"  {i:>2} {mid:<21}" + "".join(f"{v:6.2f}" for v in row))
    return "\n".join(lines) + "\n"


def write_report(report: dict, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    j, t = out_dir / "report.json", out_dir / "report.txt"
    atomic_write_bytes(j, dumps_json(report))
    atomic_write_bytes(t, render_text(report).encode("utf-8"))
    return j, t
