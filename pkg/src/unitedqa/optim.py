"""Adam with bias correction and the linear warmup/decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], **hyper) -> "OptimizerState":
        st = cls(**hyper)
        for name, p in params.items():
            st.m[name] = np.zeros_like(p)
            st.v[name] = np.zeros_like(p)
        return st


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimizerState, lr: float | None = None) -> dict[str, np.ndarray]:
    """One Adam update. Returns new parameter arrays; ``state`` is advanced in place.

    ``lr`` overrides ``state.lr`` for this step (used by the schedule).
    """
    lr = state.lr if lr is None else lr
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        if state.m.get(name) is None:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        elif state.m[name].shape != p.shape:
            raise ValueError(f"optimizer state for {name!r} has shape {state.m[name].shape}")

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    out = {}
    for name, p in params.items():
        g = grads[name]
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        if lr == 0.0:
            out[name] = p
            continue
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


def lr_schedule(step: int, total_steps: int, warmup_ratio: float, peak_lr: float) -> float:
    """Linear ramp 0 -> peak over the warmup steps, then linear decay to 0."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0.0 <= warmup_ratio <= 1.0:
        raise ValueError("warmup_ratio must lie in [0, 1]")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = warmup_ratio * total_steps
    if step < warmup:
        return peak_lr * step / warmup
    if step >= total_steps:
        return 0.0
    return peak_lr * (total_steps - step) / (total_steps - warmup)
