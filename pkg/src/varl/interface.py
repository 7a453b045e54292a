"""Deterministic visual-arithmetic interface: fovea, store, and frozen nets.

Twelve actions move a one-cell fovea over an n x n glyph grid, invoke the
frozen perception networks, and run integer arithmetic against a store
register whose final value is the agent's answer.  Every action mutates
exactly one state field; everything else is carried over untouched.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from .data import CELL


class Action(IntEnum):
    """The interface action set; integer encoding is part of the contract."""

    RIGHT = 0
    LEFT = 1
    DOWN = 2
    UP = 3
    PLUS = 4
    TIMES = 5
    MAX = 6
    MIN = 7
    INC = 8
    CLASSIFY_OP = 9
    CLASSIFY_DIGIT = 10
    UPDATE_SALIENCE = 11


ACTION_COUNT = len(Action)

# arithmetic actions that read the digit register and skip on the -1 sentinel
_DIGIT_OPS = {
    Action.PLUS: lambda store, digit: store + digit,
    Action.TIMES: lambda store, digit: store * digit,
    Action.MAX: lambda store, digit: max(store, digit),
    Action.MIN: lambda store, digit: min(store, digit),
}


@dataclass(frozen=True)
class InterfaceState:
    fovea_x: int
    fovea_y: int
    store: int
    op: int
    digit: int
    salience_map: np.ndarray

    @property
    def n(self) -> int:
        return self.salience_map.shape[0]


def reset(n: int) -> InterfaceState:
    if n < 1:
        raise ValueError(f"grid size must be >= 1, got {n}")
    return InterfaceState(
        fovea_x=0, fovea_y=0, store=0, op=-1, digit=-1, salience_map=np.zeros((n, n))
    )


def get_glimpse(image: np.ndarray, fovea_x: int, fovea_y: int) -> np.ndarray:
    """The exact 28x28 pixel block of grid cell (fovea_x, fovea_y)."""
    return image[fovea_y * CELL : (fovea_y + 1) * CELL, fovea_x * CELL : (fovea_x + 1) * CELL]


def update_interface(
    state: InterfaceState, image: np.ndarray, action: Action, perception
) -> InterfaceState:
    """Apply one action; returns the successor state.

    Movement clamps at grid edges.  The four digit-consuming arithmetic
    actions are store no-ops while digit is still the -1 sentinel; INC is
    unconditional.  Classification actions run the frozen nets on the
    current glimpse and never touch the store.
    """
    action = Action(action)
    n = state.n
    if action == Action.RIGHT:
        return replace(state, fovea_x=min(state.fovea_x + 1, n - 1))
    if action == Action.LEFT:
        return replace(state, fovea_x=max(state.fovea_x - 1, 0))
    if action == Action.DOWN:
        return replace(state, fovea_y=min(state.fovea_y + 1, n - 1))
    if action == Action.UP:
        return replace(state, fovea_y=max(state.fovea_y - 1, 0))
    if action in _DIGIT_OPS:
        if state.digit == -1:
            return state
        return replace(state, store=_DIGIT_OPS[action](state.store, state.digit))
    if action == Action.INC:
        return replace(state, store=state.store + 1)
    glimpse = get_glimpse(image, state.fovea_x, state.fovea_y)
    if action == Action.CLASSIFY_OP:
        cls, _ = perception.classify_op(glimpse)
        return replace(state, op=cls)
    if action == Action.CLASSIFY_DIGIT:
        cls, _ = perception.classify_digit(glimpse)
        return replace(state, digit=cls)
    # UPDATE_SALIENCE is the only variant left
    sal = perception.salience_map(image, state.fovea_x, state.fovea_y)
    return replace(state, salience_map=np.asarray(sal, dtype=np.float64).copy())


OP_ONEHOT = 5  # -1 plus classes 0..3
DIGIT_ONEHOT = 11  # -1 plus classes 0..9


def encoding_length(n: int) -> int:
    return 2 + 1 + OP_ONEHOT + DIGIT_ONEHOT + n * n


def encode_observation(state: InterfaceState) -> np.ndarray:
    """Fixed-length real encoding of the interface observation.

    Fovea coordinates normalized to [0,1] (0 when n=1), store scaled by 100
    and clipped to [0,10], op and digit as one-hots with slot 0 for the -1
    sentinel, then the flattened salience map.
    """
    n = state.n
    denom = max(n - 1, 1)
    op_onehot = np.zeros(OP_ONEHOT)
    op_onehot[state.op + 1] = 1.0
    digit_onehot = np.zeros(DIGIT_ONEHOT)
    digit_onehot[state.digit + 1] = 1.0
    return np.concatenate(
        [
            [state.fovea_x / denom, state.fovea_y / denom],
            [np.clip(state.store / 100.0, 0.0, 10.0)],
            op_onehot,
            digit_onehot,
            state.salience_map.reshape(-1),
        ]
    )


def format_trace_line(t: int, action: Action, state: InterfaceState) -> str:
    """One debug-trace line per step; fields match the documented order."""
    return (
        f"{t}, {Action(action).name.lower()}, {state.fovea_x}, {state.fovea_y}, "
        f"{state.store}, {state.op}, {state.digit}"
    )
