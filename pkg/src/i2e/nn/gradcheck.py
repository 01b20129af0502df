"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .autograd import Parameter

# Elements where both gradients are below this magnitude compare as matching;
# central-difference noise in float64 sits around 1e-10, well under it.
_NEGLIGIBLE = 1e-5


class GradientCheckError(Exception):
    pass


def gradient_check(loss_fn, params: list[Parameter], h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    `loss_fn()` must rebuild the scalar loss from the CURRENT parameter
    values; parameters must be float64 for the differences to be meaningful.
    """
    for p in params:
        if p.values.dtype != np.float64:
            raise GradientCheckError(f"{p.name}: gradient check requires float64 parameters")

    out = loss_fn()
    if not np.isfinite(out.values).all():
        raise GradientCheckError("loss is non-finite")
    for p in params:
        p.zero_grad()
    out.backward()
    analytic = {
        p.name: (p.tensor.grad.copy() if p.tensor.grad is not None else np.zeros_like(p.values))
        for p in params
        if p.trainable
    }

    worst = 0.0
    for p in params:
        if not p.trainable:
            continue
        flat = p.values.reshape(-1)
        a_flat = analytic[p.name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(loss_fn().values)
            flat[idx] = orig - h
            down = float(loss_fn().values)
            flat[idx] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(a_flat[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), _NEGLIGIBLE)
            if rel > worst:
                worst = rel
    return worst
