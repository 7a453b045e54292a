"""Gradient-descent optimizers: ADAM (default) and plain SGD."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    """Per-parameter moment estimates plus hyperparameters."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 1e-3


def init_adam(params: list[Tensor], learning_rate: float = 1e-3, **kwargs) -> AdamState:
    return AdamState(
        first_moment=[np.zeros_like(p.data) for p in params],
        second_moment=[np.zeros_like(p.data) for p in params],
        learning_rate=learning_rate,
        **kwargs,
    )


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected ADAM update, in place on the parameter tensors."""
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise ValueError(
            f"adam_step: got {len(params)} params, {len(grads)} grads, "
            f"{len(state.first_moment)} moment slots"
        )
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state


def sgd_step(params: list[Tensor], grads: list[np.ndarray], learning_rate: float) -> None:
    if len(params) != len(grads):
        raise ValueError(f"sgd_step: got {len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        p.data -= learning_rate * g


@dataclass
class Optimizer:
    """Uniform front for the two update rules, selected by name."""

    kind: str = "adam"
    learning_rate: float = 1e-3
    clip_norm: float | None = None
    _adam: AdamState | None = field(default=None, repr=False)

    def step(self, params: list[Tensor], grads: list[np.ndarray]) -> None:
        if self.clip_norm is not None:
            total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                grads = [g * scale for g in grads]
        if self.kind == "adam":
            if self._adam is None:
                self._adam = init_adam(params, learning_rate=self.learning_rate)
            adam_step(params, grads, self._adam)
        elif self.kind == "sgd":
            sgd_step(params, grads, self.learning_rate)
        else:
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
