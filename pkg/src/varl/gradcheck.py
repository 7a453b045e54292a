"""Central-difference gradient verification for tape-recorded functions."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor


def numeric_gradient(f: Callable[[], float], param: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central differences of a scalar-valued closure w.r.t. one tensor.

    ``f`` must re-read ``param.data`` on every call; the tensor is perturbed
    in place and restored afterwards.
    """
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(param.data.shape)


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(1, |a|, |b|), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def check_gradients(
    build_loss: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-4,
) -> float:
    """Compare tape gradients of ``build_loss()`` against central differences.

    Returns the worst relative error over all parameters.  ``build_loss``
    must construct the loss from ``params`` from scratch on every call (it
    runs once per perturbed evaluation).
    """
    with Tape() as tape:
        for p in params:
            tape.watch(p)
        loss = build_loss()
    analytic = tape.gradient(loss, params)

    def value() -> float:
        return float(build_loss().data)

    worst = 0.0
    for p, g in zip(params, analytic):
        numeric = numeric_gradient(value, p, h=h)
        worst = max(worst, max_relative_error(g, numeric))
    return worst
