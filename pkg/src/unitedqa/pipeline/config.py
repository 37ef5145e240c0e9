"""Run configuration: JSON file, environment overrides, validation.

Relative paths are resolved against the directory of the config file.
Environment variables override file values:

* ``UNITEDQA_<SECTION>__<FIELD>``, e.g. ``UNITEDQA_TRAINER__EPOCHS=50``;
* ``UNITEDQA_<FIELD>`` when the field name occurs in one section only,
  e.g. ``UNITEDQA_EPOCHS=50``.

Values are parsed as JSON when possible, else taken as strings.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..records import InputError

ENV_PREFIX = "UNITEDQA_"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class PathsConfig(_Section):
    corpus: str = "corpus.jsonl"
    train: str = "train.jsonl"
    dev: str | None = None  # falls back to the training file
    test: str = "test.jsonl"
    index: str = "work/index.bin"
    checkpoints: str = "work/checkpoints"
    outputs: str = "work/outputs"

    @model_validator(mode="after")
    def _non_empty(self):
        for name in type(self).model_fields:
            value = getattr(self, name)
            if value is not None and not str(value).strip():
                raise ValueError(f"paths.{name} must be a non-empty path")
        return self


class RetrievalConfig(_Section):
    k: int = Field(100, ge=1)
    split_width: int = Field(100, ge=1)
    k_values: list[int] = Field(default_factory=lambda: [1, 5, 20, 100], min_length=1)
    k1: float = Field(1.2, ge=0)
    b: float = Field(0.75, ge=0, le=1)

    @model_validator(mode="after")
    def _k_values(self):
        if any(v < 1 for v in self.k_values):
            raise ValueError("retrieval.k_values must all be >= 1")
        if max(self.k_values) > self.k:
            raise ValueError(f"retrieval.k_values exceed retrieval depth k={self.k}")
        return self


class ExtractiveModelConfig(_Section):
    num_layers: int = Field(2, ge=1)
    hidden_dim: int = Field(32, ge=1)
    num_heads: int = Field(2, ge=1)
    ff_dim: int = Field(64, ge=1)
    max_sequence_length: int = Field(64, ge=4)
    max_span_length: int = Field(10, ge=1)
    passages: int = Field(8, ge=1)

    @model_validator(mode="after")
    def _heads(self):
        if self.hidden_dim % self.num_heads:
            raise ValueError("extractive.hidden_dim must be divisible by extractive.num_heads")
        return self


class GenerativeModelConfig(_Section):
    encoder_layers: int = Field(2, ge=1)
    decoder_layers: int = Field(2, ge=1)
    hidden_dim: int = Field(32, ge=1)
    num_heads: int = Field(2, ge=1)
    ff_dim: int = Field(64, ge=1)
    max_sequence_length: int = Field(64, ge=4)
    max_decode_length: int = Field(8, ge=1)
    attention_bias: bool = True
    passages: int = Field(8, ge=1)  # also K_max, the number of bias rows

    @model_validator(mode="after")
    def _heads(self):
        if self.hidden_dim % self.num_heads:
            raise ValueError("generative.hidden_dim must be divisible by generative.num_heads")
        return self


class TrainerConfig(_Section):
    epochs: int = Field(200, ge=1)
    extractive_lr: float = Field(1e-3, ge=0)
    generative_lr: float = Field(1e-3, ge=0)
    warmup_ratio: float = Field(0.1, ge=0, le=1)
    gammas: list[float] = Field(default_factory=lambda: [4.0, 8.0], min_length=1)
    noise_scale: float = Field(1e-3, ge=0)
    epsilon_adv: float = Field(1e-3, ge=0)
    alpha: float = Field(0.5, ge=0)
    beta: float = Field(0.5, ge=0)
    eval_every: int = Field(1, ge=1)
    target_em: float | None = Field(None, ge=0, le=1)  # stop once dev EM reaches it
    patience: int | None = Field(None, ge=1)  # evaluations without improvement

    @model_validator(mode="after")
    def _ranges(self):
        if any(g < 0 for g in self.gammas):
            raise ValueError("trainer.gammas must all be >= 0")
        if self.alpha + self.beta <= 0:
            raise ValueError("trainer.alpha + trainer.beta must be > 0")
        return self


class EnsembleConfig(_Section):
    tau: float = Field(0.6, ge=0)
    delta: float = Field(0.4, ge=0)

    @model_validator(mode="after")
    def _positive(self):
        if self.tau + self.delta <= 0:
            raise ValueError("ensemble.tau + ensemble.delta must be > 0")
        return self


class RunConfig(_Section):
    paths: PathsConfig = Field(default_factory=PathsConfig)
    retrieval: RetrievalConfig = Field(default_factory=RetrievalConfig)
    extractive: ExtractiveModelConfig = Field(default_factory=ExtractiveModelConfig)
    generative: GenerativeModelConfig = Field(default_factory=GenerativeModelConfig)
    trainer: TrainerConfig = Field(default_factory=TrainerConfig)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    base_dir: str = "."

    @model_validator(mode="after")
    def _cross(self):
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        for name in ("extractive", "generative"):
            if getattr(self, name).passages > self.retrieval.k:
                raise ValueError(f"{name}.passages exceeds retrieval.k={self.retrieval.k}")
        return self

    def path(self, name: str) -> Path:
        """Absolute form of a configured path (``dev`` falls back to ``train``)."""
        value = getattr(self.paths, name)
        if value is None and name == "dev":
            value = self.paths.train
        p = Path(value)
        return p if p.is_absolute() else (Path(self.base_dir) / p).resolve()

    def require(self, *names: str) -> None:
        missing = [f"paths.{n} ({self.path(n)})" for n in names if not self.path(n).exists()]
        if missing:
            raise InputError("missing input file(s): " + ", ".join(missing))

    def snapshot(self) -> dict:
        """Config contents without machine-specific fields."""
        d = self.model_dump(mode="json")
        d.pop("base_dir")
        return d


def _parse_env_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _env_overrides(environ) -> dict:
    sections = {n: f.annotation for n, f in RunConfig.model_fields.items()
                if isinstance(f.annotation, type) and issubclass(f.annotation, BaseModel)}
    owners: dict[str, list[str]] = {}
    for sec, model in sections.items():
        for field in model.model_fields:
            owners.setdefault(field, []).append(sec)
    out: dict = {}
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        value = _parse_env_value(environ[key])
        if "__" in name:
            sec, field = name.split("__", 1)
            if sec not in sections or field not in sections[sec].model_fields:
                raise InputError(f"{key}: unknown config field {sec}.{field}")
            out.setdefault(sec, {})[field] = value
        elif name in ("seeds",):
            out[name] = value
        elif name in owners:
            if len(owners[name]) > 1:
                raise InputError(f"{key}: ambiguous field, use UNITEDQA_<SECTION>__{name.upper()}"
                                 f" (sections: {', '.join(owners[name])})")
            out.setdefault(owners[name][0], {})[name] = value
        else:
            raise InputError(f"{key}: unknown config field {name}")
    return out


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out.get(k, {}), v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "config"
        lines.append(f"{loc}: {err['msg']}")
    return "invalid configuration: " + "; ".join(lines)


def build_config(data: dict, base_dir=".", environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    merged = _merge(data, _env_overrides(environ))
    merged["base_dir"] = str(Path(base_dir).resolve())
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as exc:
        raise InputError(format_validation_error(exc)) from None


def load_config(path=None, environ=None) -> RunConfig:
    """Read a JSON config file (or defaults when ``path`` is None)."""
    if path is None:
        return build_config({}, Path.cwd(), environ)
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: malformed JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return build_config(data, path.parent, environ)
