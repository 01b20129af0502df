"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Parameter


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: list[Parameter],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One in-place update; parameters without a gradient entry are skipped."""
    state.step += 1
    t = state.step
    for p in params:
        if not p.trainable or p.name not in grads:
            continue
        g = grads[p.name]
        if g.shape != p.values.shape:
            raise ValueError(f"{p.name}: gradient shape {g.shape} != param shape {p.values.shape}")
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None:
            m = np.zeros_like(p.values)
            v = np.zeros_like(p.values)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * (g * g)
        state.m[p.name] = m
        state.v[p.name] = v
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p.values = p.values - (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.values.dtype)
    return state
