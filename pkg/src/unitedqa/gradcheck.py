"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, grad, no_grad


def _scalar_value(out) -> float:
    if not isinstance(out, Tensor) or out.size != 1:
        shape = getattr(out, "shape", type(out).__name__)
        raise ValueError(f"grad_check needs f to return a scalar Tensor, got {shape}")
    return float(out.data.reshape(-1)[0])


def grad_check(f, params: list[Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` is called with no arguments and must read the current values of
    ``params``. The error for one entry is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    out = f()
    _scalar_value(out)
    if out.requires_grad:
        analytic = grad(out, params)
    else:
        analytic = [np.zeros_like(p.data) for p in params]

    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            a_flat = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = _scalar_value(f())
                flat[i] = orig - h
                fm = _scalar_value(f())
                flat[i] = orig
                num = (fp - fm) / (2.0 * h)
                err = abs(a_flat[i] - num) / max(1.0, abs(a_flat[i]), abs(num))
                worst = max(worst, err)
    return worst
