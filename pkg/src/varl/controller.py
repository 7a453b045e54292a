"""Recurrent policy/value network over interface observations.

One dense projection feeds a 128-unit LSTM; a softmax policy head and a
scalar value head read the same hidden state.  The forward pass is built
from taped primitives so the trainer can differentiate through time; the
rollout wrappers here run it tape-free.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .autodiff import Tensor, relu, softmax
from .interface import ACTION_COUNT
from .nn import dense, dense_init, lstm_cell, lstm_init
from .serialize import load_arrays, save_arrays

HIDDEN_UNITS = 128
PROJECTION_UNITS = 64


def init_controller(
    obs_dim: int, seed: int, hidden_units: int = HIDDEN_UNITS, projection_units: int = PROJECTION_UNITS
) -> dict[str, Tensor]:
    if obs_dim < 1:
        raise ValueError(f"obs_dim must be >= 1, got {obs_dim}")
    rng = np.random.default_rng([seed, 0xC0DE])
    proj = dense_init(rng, obs_dim, projection_units)
    lstm = lstm_init(rng, projection_units, hidden_units)
    policy = dense_init(rng, hidden_units, ACTION_COUNT)
    value = dense_init(rng, hidden_units, 1)
    return {
        "proj_w": proj["w"], "proj_b": proj["b"],
        "lstm_w": lstm["w"], "lstm_u": lstm["u"], "lstm_b": lstm["b"],
        "pi_w": policy["w"], "pi_b": policy["b"],
        "v_w": value["w"], "v_b": value["b"],
    }


def hidden_units_of(params: dict[str, Tensor]) -> int:
    return params["lstm_u"].data.shape[0]


def initial_hidden(params: dict[str, Tensor], batch_size: int = 1) -> tuple[np.ndarray, np.ndarray]:
    n = hidden_units_of(params)
    return np.zeros((batch_size, n)), np.zeros((batch_size, n))


def forward(
    params: dict[str, Tensor], h: Tensor, c: Tensor, obs: Tensor
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """One taped step over a row batch: (logits, values, h', c').

    values has shape (B, 1); logits (B, 12).
    """
    x = relu(dense(obs, params["proj_w"], params["proj_b"]))
    h2, c2 = lstm_cell(x, h, c, {"w": params["lstm_w"], "u": params["lstm_u"], "b": params["lstm_b"]})
    logits = dense(h2, params["pi_w"], params["pi_b"])
    values = dense(h2, params["v_w"], params["v_b"])
    return logits, values, h2, c2


def step(
    params: dict[str, Tensor], hidden: tuple[np.ndarray, np.ndarray], obs: np.ndarray
) -> tuple[np.ndarray, float, tuple[np.ndarray, np.ndarray]]:
    """Tape-free single-observation step: (12 probabilities, value, hidden')."""
    obs = np.asarray(obs, dtype=np.float64)
    expected = params["proj_w"].data.shape[0]
    if obs.shape != (expected,):
        raise ValueError(f"observation length {obs.shape} does not match obs_dim {expected}")
    h, c = hidden
    logits, values, h2, c2 = forward(params, Tensor(h), Tensor(c), Tensor(obs[None, :]))
    probs = softmax(logits).data[0]
    if not np.all(np.isfinite(probs)):
        raise FloatingPointError(f"non-finite action distribution: {probs}")
    return probs, float(values.data[0, 0]), (h2.data, c2.data)


def step_batch(
    params: dict[str, Tensor], hidden: tuple[np.ndarray, np.ndarray], obs_batch: np.ndarray
) -> tuple[np.ndarray, np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Tape-free lockstep over B observations: ((B,12) probs, (B,) values, hidden')."""
    h, c = hidden
    logits, values, h2, c2 = forward(params, Tensor(h), Tensor(c), Tensor(np.asarray(obs_batch, dtype=np.float64)))
    probs = softmax(logits).data
    if not np.all(np.isfinite(probs)):
        raise FloatingPointError("non-finite action distribution in batch step")
    return probs, values.data[:, 0], (h2.data, c2.data)


def sample_action(distribution: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    """Inverse-CDF draw in fixed action order; log-prob read off the input."""
    u = rng.random()
    cdf = np.cumsum(distribution)
    action = int(np.searchsorted(cdf, u, side="right"))
    action = min(action, len(distribution) - 1)  # guard u == 1.0 edge
    return action, float(np.log(distribution[action]))


def greedy_action(distribution: np.ndarray) -> tuple[int, float]:
    """Argmax with ties resolved to the lowest action index."""
    action = int(np.argmax(distribution))
    return action, float(np.log(distribution[action]))


class ControllerPolicy:
    """Policy-protocol adapter over controller parameters for rollouts."""

    def __init__(self, params: dict[str, Tensor]):
        self.params = params

    def initial_hidden(self):
        h, c = initial_hidden(self.params)
        return h, c

    def act(self, obs, hidden, rng, greedy):
        probs, value, hidden2 = step(self.params, hidden, obs)
        action, log_prob = greedy_action(probs) if greedy else sample_action(probs, rng)
        return action, log_prob, value, hidden2


def save_controller(path: str | Path, params: dict[str, Tensor]) -> None:
    save_arrays(path, {f"ctrl/{k}": v.data for k, v in params.items()})


def load_controller(path: str | Path) -> dict[str, Tensor]:
    arrays = load_arrays(path)
    params = {}
    for name, arr in arrays.items():
        prefix, _, key = name.partition("/")
        if prefix != "ctrl" or not key:
            raise ValueError(f"unexpected entry {name!r} in controller checkpoint")
        params[key] = Tensor(arr, requires_grad=True)
    return params
