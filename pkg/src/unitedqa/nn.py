"""Transformer building blocks over :mod:`unitedqa.tensor`.

Parameters live in a flat ``dict[str, Tensor]``; names are dotted paths such
as ``"enc.0.attn.wq"``. Layers are pre-LayerNorm.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

NEG_INF = -1e30  # additive mask value; exp() underflows to exactly 0


def init_linear(params: dict, rng: np.random.Generator, name: str, d_in: int, d_out: int) -> None:
    params[f"{name}.w"] = T.parameter(rng.normal(0.0, d_in ** -0.5, size=(d_in, d_out)), f"{name}.w")
    params[f"{name}.b"] = T.parameter(np.zeros(d_out), f"{name}.b")


def init_layer_norm(params: dict, name: str, d: int) -> None:
    params[f"{name}.g"] = T.parameter(np.ones(d), f"{name}.g")
    params[f"{name}.b"] = T.parameter(np.zeros(d), f"{name}.b")


def init_attention(params: dict, rng, name: str, d: int) -> None:
    for proj in ("q", "k", "v", "o"):
        init_linear(params, rng, f"{name}.{proj}", d, d)


def init_block(params: dict, rng, name: str, d: int, ff: int, cross: bool = False) -> None:
    init_layer_norm(params, f"{name}.ln1", d)
    init_attention(params, rng, f"{name}.attn", d)
    if cross:
        init_layer_norm(params, f"{name}.ln_x", d)
        init_attention(params, rng, f"{name}.xattn", d)
    init_layer_norm(params, f"{name}.ln2", d)
    init_linear(params, rng, f"{name}.ff1", d, ff)
    init_linear(params, rng, f"{name}.ff2", ff, d)


def linear(x: Tensor, params: dict, name: str) -> Tensor:
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def layer_norm(x: Tensor, params: dict, name: str) -> Tensor:
    return T.layer_norm(x) * params[f"{name}.g"] + params[f"{name}.b"]


def split_heads(x: Tensor, num_heads: int) -> Tensor:
    """(..., L, d) -> (..., H, L, d/H)."""
    *lead, n, d = x.shape
    x = x.reshape(*lead, n, num_heads, d // num_heads)
    nd = x.ndim
    axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return x.transpose(axes)


def merge_heads(x: Tensor) -> Tensor:
    """(..., H, L, dh) -> (..., L, H*dh)."""
    *lead, h, n, dh = x.shape
    nd = x.ndim
    axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return x.transpose(axes).reshape(*lead, n, h * dh)


def attention_weights(q: Tensor, k: Tensor, additive=None) -> Tensor:
    """Softmax of scaled dot-product scores plus optional additive terms."""
    scores = (q @ k.transpose(_swap_last(k.ndim))) * (q.shape[-1] ** -0.5)
    if additive is not None:
        for a in additive:
            if a is not None:
                scores = scores + a
    return T.softmax(scores, axis=-1)


def _swap_last(nd: int) -> list[int]:
    return list(range(nd - 2)) + [nd - 1, nd - 2]


def multi_head_attention(x_q: Tensor, x_kv: Tensor, params: dict, name: str, num_heads: int,
                         additive=None, return_weights: bool = False):
    q = split_heads(linear(x_q, params, f"{name}.q"), num_heads)
    k = split_heads(linear(x_kv, params, f"{name}.k"), num_heads)
    v = split_heads(linear(x_kv, params, f"{name}.v"), num_heads)
    w = attention_weights(q, k, additive)
    out = linear(merge_heads(w @ v), params, f"{name}.o")
    return (out, w) if return_weights else out


def feed_forward(x: Tensor, params: dict, name: str) -> Tensor:
    return linear(T.gelu(linear(x, params, f"{name}.ff1")), params, f"{name}.ff2")


def encoder_block(x: Tensor, params: dict, name: str, num_heads: int, key_mask=None) -> Tensor:
    h = layer_norm(x, params, f"{name}.ln1")
    x = x + multi_head_attention(h, h, params, f"{name}.attn", num_heads, additive=(key_mask,))
    return x + feed_forward(layer_norm(x, params, f"{name}.ln2"), params, name)


def key_padding_mask(valid: np.ndarray) -> np.ndarray:
    """(B, L) boolean validity -> (B, 1, 1, L) additive mask."""
    return np.where(valid, 0.0, NEG_INF)[:, None, None, :]


def causal_mask(n: int) -> np.ndarray:
    return np.triu(np.full((n, n), NEG_INF), k=1)
