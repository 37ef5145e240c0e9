"""Seeded, counter-based random streams (Philox) with explicit threading.

There is no module-level generator: every consumer receives a Generator
derived from a seed and a tuple of stream labels, so two call sites never
share state by accident.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Generator for ``seed`` and a named sub-stream, e.g. ``make_rng(3, "init")``."""
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_label_key(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))
