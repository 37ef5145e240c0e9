"""Checkpoint file: JSON manifest followed by raw little-endian float64 data.

Layout (all integers little-endian)::

    bytes 0..7    magic  b"UQACKPT1"
    bytes 8..15   uint64 N = length of the manifest in bytes
    next N bytes  UTF-8 JSON: {"meta": {...}, "tensors": [{"name": str, "shape": [int, ...]}, ...]}
    remainder     float64 values of each tensor, C order, in manifest order

The manifest is serialised with sorted keys and no whitespace so equal
contents always produce equal bytes.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"UQACKPT1"


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_checkpoint(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    manifest = {
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(np.shape(a))} for n, a in tensors.items()],
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in tensors.values())
    return MAGIC + struct.pack("<Q", len(head)) + head + body


def loads_checkpoint(payload: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if payload[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (n,) = struct.unpack("<Q", payload[8:16])
    manifest = json.loads(payload[16:16 + n].decode("utf-8"))
    offset = 16 + n
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(payload):
            raise ValueError(f"checkpoint truncated while reading {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(payload[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(payload):
        raise ValueError("trailing bytes after last tensor")
    return tensors, manifest["meta"]


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    atomic_write_bytes(path, dumps_checkpoint(tensors, meta))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads_checkpoint(Path(path).read_bytes())
