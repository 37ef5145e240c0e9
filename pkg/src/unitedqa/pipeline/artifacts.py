"""Shared pipeline plumbing: file naming, hashing, reader (de)serialisation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..checkpoint import atomic_write_bytes, dumps_checkpoint, load_checkpoint
from ..extractive import EncoderConfig, ExtractiveReader
from ..generative import GenerativeReader, Seq2SeqConfig
from ..records import InputError, QAExample
from ..retrieval import PassageIndex, retrieve
from ..text import Vocab
from .config import RunConfig

READERS = ("extractive", "generative")


class NoTrainableDataError(Exception):
    """Raised when training data yields no usable example."""


def git_blob_hash(data: bytes) -> str:
    """SHA-1 of ``b"blob <len>\\0" + data``, as git computes object ids."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def input_hashes(paths: dict[str, Path]) -> dict:
    files = {name: git_blob_hash(Path(p).read_bytes()) for name, p in sorted(paths.items())}
    combined = git_blob_hash(json.dumps(files, sort_keys=True).encode())
    return {"files": files, "combined": combined}


def dumps_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def write_json(path, obj) -> None:
    atomic_write_bytes(Path(path), dumps_json(obj))


def checkpoint_path(cfg: RunConfig, reader: str, seed: int, gamma: float | None = None) -> Path:
    stem = f"{reader}-seed{seed}"
    if gamma is not None:
        stem += f"-gamma{gamma:g}"
    return cfg.path("checkpoints") / f"{stem}.ckpt"


def manifest_path(checkpoint: Path) -> Path:
    return checkpoint.with_suffix(".manifest.json")


def build_vocab(index: PassageIndex, train: list[QAExample]) -> Vocab:
    texts = [index.passages[pid].text for pid in sorted(index.passages)]
    texts += [ex.question for ex in train]
    texts += [a for ex in train for a in ex.answers]
    return Vocab.build(texts)


def top_passages(index: PassageIndex, question: str, n: int, question_id: str = "") -> list[str]:
    if not index.passages:
        return []
    res = retrieve(index, question, n, question_id)
    return [index.passages[pid].text for pid in res.passage_ids]


def make_reader(cfg: RunConfig, reader: str, vocab: Vocab, seed: int):
    if reader == "extractive":
        m = cfg.extractive
        enc = EncoderConfig(len(vocab), m.num_layers, m.hidden_dim, m.num_heads,
                            m.max_sequence_length, m.ff_dim, seed)
        return ExtractiveReader(enc, vocab, max_span_length=m.max_span_length)
    if reader == "generative":
        m = cfg.generative
        s2s = Seq2SeqConfig(len(vocab), m.encoder_layers, m.decoder_layers, m.hidden_dim, m.num_heads,
                            m.passages, m.max_decode_length, m.max_sequence_length, m.ff_dim,
                            m.attention_bias, seed)
        return GenerativeReader(s2s, vocab)
    raise InputError(f"unknown reader {reader!r}; expected one of {READERS}")


def reader_checkpoint_bytes(model, passages: int, extra: dict) -> bytes:
    meta = {
        "reader": model.model_type,
        "model": asdict(model.config),
        "vocab": model.vocab.to_list(),
        "passages": passages,
        **extra,
    }
    if model.model_type == "extractive":
        meta["max_span_length"] = model.max_span_length
    return dumps_checkpoint({n: p.data for n, p in model.params.items()}, meta)


def load_reader(path):
    """Rebuild a reader from a checkpoint; returns ``(reader, meta)``."""
    try:
        tensors, meta = load_checkpoint(path)
    except FileNotFoundError:
        raise InputError(f"checkpoint not found: {path}") from None
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    vocab = Vocab.from_list(meta["vocab"])
    params = {n: T.parameter(np.array(a), n) for n, a in tensors.items()}
    if meta.get("reader") == "extractive":
        model = ExtractiveReader(EncoderConfig(**meta["model"]), vocab, params, meta["max_span_length"])
    elif meta.get("reader") == "generative":
        model = GenerativeReader(Seq2SeqConfig(**meta["model"]), vocab, params)
    else:
        raise InputError(f"{path}: unknown reader type {meta.get('reader')!r}")
    return model, meta
