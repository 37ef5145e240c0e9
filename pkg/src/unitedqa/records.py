"""Plain data records and their JSON-lines forms."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import atomic_write_bytes


class InputError(ValueError):
    """Malformed or inconsistent user-supplied input."""


@dataclass
class Passage:
    passage_id: str
    source_doc_id: str
    title: str
    tokens: list[str]
    text: str
    rank: int | None = None


@dataclass
class QAExample:
    question_id: str
    question: str
    answers: list[str]
    question_overlap: bool | None = None
    answer_overlap: bool | None = None

    def __post_init__(self):
        if not self.answers:
            raise InputError(f"question {self.question_id!r} has no gold answers")
        if (self.question_overlap is None) != (self.answer_overlap is None):
            raise InputError(f"question {self.question_id!r} sets only one overlap flag")

    @property
    def annotated(self) -> bool:
        return self.question_overlap is not None

    def to_json(self) -> dict:
        d = {"question_id": self.question_id, "question": self.question, "answers": list(self.answers)}
        if self.annotated:
            d["question_overlap"] = self.question_overlap
            d["answer_overlap"] = self.answer_overlap
        return d


MODEL_TYPES = ("extractive", "generative")


@dataclass
class ReaderPrediction:
    question_id: str
    answer: str
    model_id: str
    model_type: str
    score: float = 0.0
    extra: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.model_type not in MODEL_TYPES:
            raise InputError(f"model_type must be one of {MODEL_TYPES}, got {self.model_type!r}")

    def to_json(self) -> dict:
        return {"question_id": self.question_id, "answer": self.answer, "model_id": self.model_id,
                "model_type": self.model_type, "score": float(self.score)}


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise InputError(f"{path}:{lineno}: expected a JSON object")
            rows.append(obj)
    return rows


def write_jsonl(path, rows) -> None:
    text = "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in rows)
    atomic_write_bytes(Path(path), text.encode("utf-8"))


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise InputError(f"{where}: missing field {key!r}")
    return obj[key]


def load_dataset(path) -> list[QAExample]:
    out = []
    for i, row in enumerate(read_jsonl(path), 1):
        where = f"{path}: record {i}"
        answers = _require(row, "answers", where)
        if not isinstance(answers, list) or not all(isinstance(a, str) for a in answers):
            raise InputError(f"{where}: answers must be a list of strings")
        out.append(QAExample(
            question_id=str(_require(row, "question_id", where)),
            question=str(_require(row, "question", where)),
            answers=answers,
            question_overlap=row.get("question_overlap"),
            answer_overlap=row.get("answer_overlap"),
        ))
    ids = [ex.question_id for ex in out]
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate question_id")
    return out


def load_predictions(path) -> list[ReaderPrediction]:
    out = []
    for i, row in enumerate(read_jsonl(path), 1):
        where = f"{path}: record {i}"
        out.append(ReaderPrediction(
            question_id=str(_require(row, "question_id", where)),
            answer=str(_require(row, "answer", where)),
            model_id=str(_require(row, "model_id", where)),
            model_type=str(_require(row, "model_type", where)),
            score=float(row.get("score", 0.0)),
        ))
    return out

