"""Layer building blocks shared by every network: init, dense, LSTM cell."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .autodiff import (
    Tensor,
    add,
    add_bias,
    gather_rows,
    log_softmax,
    matmul,
    mean_all,
    mul,
    mul_scalar,
    reshape,
    sigmoid,
    slice_cols,
    softplus,
    sub,
    tanh,
)


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    """Uniform init in +-sqrt(6/(fan_in+fan_out)); returns a trainable leaf."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for a 2-D batch x."""
    return add_bias(matmul(x, w), b)


def dense_init(rng: np.random.Generator, n_in: int, n_out: int) -> dict[str, Tensor]:
    return {"w": glorot(rng, (n_in, n_out), n_in, n_out), "b": zeros_param((n_out,))}


def lstm_init(rng: np.random.Generator, n_in: int, n_hidden: int) -> dict[str, Tensor]:
    """Combined-gate LSTM weights, gate order (input, forget, cell, output).

    The forget-gate bias slice starts at 1.0 so early training does not
    flush the cell state.
    """
    w = glorot(rng, (n_in, 4 * n_hidden), n_in, 4 * n_hidden)
    u = glorot(rng, (n_hidden, 4 * n_hidden), n_hidden, 4 * n_hidden)
    b = np.zeros(4 * n_hidden)
    b[n_hidden : 2 * n_hidden] = 1.0
    return {"w": w, "u": u, "b": Tensor(b, requires_grad=True)}


def lstm_cell(
    x: Tensor, h: Tensor, c: Tensor, params: Mapping[str, Tensor]
) -> tuple[Tensor, Tensor]:
    """Standard LSTM gate equations; accepts vectors or row batches.

    Chaining calls on one tape differentiates through time.
    """
    single = x.data.ndim == 1
    if single:
        x = reshape(x, (1, x.data.shape[0]))
        h = reshape(h, (1, h.data.shape[0]))
        c = reshape(c, (1, c.data.shape[0]))
    n_hidden = h.data.shape[1]
    if x.data.shape[0] != h.data.shape[0] or h.data.shape != c.data.shape:
        raise ValueError(
            f"lstm_cell: batch dims disagree (x {x.data.shape}, h {h.data.shape}, c {c.data.shape})"
        )

    gates = add(add_bias(matmul(x, params["w"]), params["b"]), matmul(h, params["u"]))
    i = sigmoid(slice_cols(gates, 0, n_hidden))
    f = sigmoid(slice_cols(gates, n_hidden, 2 * n_hidden))
    g = tanh(slice_cols(gates, 2 * n_hidden, 3 * n_hidden))
    o = sigmoid(slice_cols(gates, 3 * n_hidden, 4 * n_hidden))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    if single:
        h_new = reshape(h_new, (n_hidden,))
        c_new = reshape(c_new, (n_hidden,))
    return h_new, c_new


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under row softmaxes."""
    return mean_all(mul_scalar(gather_rows(log_softmax(logits), labels), -1.0))


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy, stable form softplus(z) - z*y."""
    return mean_all(sub(softplus(logits), mul(logits, Tensor(targets))))


def flatten_params(tree: Mapping, prefix: str = "") -> dict[str, Tensor]:
    """Flatten a nested mapping of tensors into slash-separated names."""
    flat: dict[str, Tensor] = {}
    for key in sorted(tree):
        value = tree[key]
        name = f"{prefix}{key}"
        if isinstance(value, Tensor):
            flat[name] = value
        else:
            flat.update(flatten_params(value, prefix=f"{name}/"))
    return flat


def param_list(tree: Mapping) -> list[Tensor]:
    """Deterministic (name-sorted) list of leaf tensors, for optimizers."""
    flat = flatten_params(tree)
    return [flat[name] for name in sorted(flat)]
