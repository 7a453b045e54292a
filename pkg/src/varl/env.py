"""External environment, reward schedule, and episode rollout.

The external environment is deliberately degenerate: it shows the same task
image every step, receives the interface's store after each action, and
scores it against the hidden answer.  All of the agent's work happens inside
the interface; this module owns the reward clock and the trajectory record.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LabeledExample
from .interface import Action, encode_observation, format_trace_line, reset, update_interface

DEFAULT_HORIZON = 30


@dataclass
class ExternalEnv:
    """Static image emitter plus answer checking over a fixed horizon."""

    example: LabeledExample
    horizon: int = DEFAULT_HORIZON
    discount: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError(f"discount must be in (0, 1], got {self.discount}")

    def observe(self) -> np.ndarray:
        return self.example.image

    def is_correct(self, store: int) -> bool:
        return store == self.example.answer


def reward(step_index: int, is_final: bool, correct: bool, horizon: int = DEFAULT_HORIZON) -> float:
    """0 whenever the transmitted store is right; timed penalties otherwise."""
    if not 0 <= step_index < horizon:
        raise ValueError(f"step {step_index} outside horizon {horizon}")
    if correct:
        return 0.0
    return -1.0 if is_final else -1.0 / horizon


def discounted_returns(rewards: list[float], gamma: float) -> list[float]:
    """R_t = sum_i gamma^(i-t) r_i for each t.

    The undiscounted case uses correctly-rounded tail sums so closed-form
    totals (like the all-incorrect episode) are matched exactly; otherwise
    the standard backward recursion.
    """
    if not rewards:
        raise ValueError("empty reward list")
    if gamma == 1.0:
        return [math.fsum(rewards[t:]) for t in range(len(rewards))]
    out = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


@dataclass
class StepRecord:
    observation: np.ndarray
    action: int
    log_prob: float
    value_estimate: float
    reward: float
    ret: float = 0.0
    advantage: float = 0.0


@dataclass
class Trajectory:
    steps: list[StepRecord] = field(default_factory=list)
    final_store: int = 0
    correct: bool = False


def run_episode(
    policy,
    env: ExternalEnv,
    perception,
    rng: np.random.Generator,
    greedy: bool = False,
    trace=None,
) -> Trajectory:
    """Roll one full episode through the coupled interface + environment.

    The policy contract: ``initial_hidden()`` yields per-episode carry state
    and ``act(obs, hidden, rng, greedy) -> (action, log_prob, value,
    hidden')``.  Policies with a ``begin_episode`` hook (scripted oracles)
    get the bound example before the first step.
    """
    perception.bind(env.example)
    if hasattr(policy, "begin_episode"):
        policy.begin_episode(env.example, perception)
    image = env.observe()
    state = reset(env.example.n)
    hidden = policy.initial_hidden()
    steps: list[StepRecord] = []
    for t in range(env.horizon):
        obs = encode_observation(state)
        action, log_prob, value, hidden = policy.act(obs, hidden, rng, greedy)
        if not (np.isfinite(log_prob) and np.isfinite(value)):
            raise FloatingPointError(
                f"policy produced non-finite output at step {t}: "
                f"log_prob={log_prob}, value={value}"
            )
        state = update_interface(state, image, action, perception)
        r = reward(t, t == env.horizon - 1, env.is_correct(state.store), env.horizon)
        steps.append(StepRecord(obs, int(action), float(log_prob), float(value), r))
        if trace is not None:
            trace.append(format_trace_line(t, Action(action), state))
    returns = discounted_returns([s.reward for s in steps], env.discount)
    for s, R in zip(steps, returns):
        s.ret = R
        s.advantage = R - s.value_estimate
    return Trajectory(steps=steps, final_store=state.store, correct=env.is_correct(state.store))


def evaluate(
    policy,
    examples: list[LabeledExample],
    perception,
    horizon: int = DEFAULT_HORIZON,
    seed: int = 0,
) -> tuple[float, list[int]]:
    """Greedy accuracy over a dataset; returns (accuracy, per-example guesses).

    No rewards influence anything here; the final store is the guess.
    """
    if not examples:
        raise ValueError("empty evaluation set")
    rng = np.random.default_rng(seed)
    guesses = []
    hits = 0
    for ex in examples:
        traj = run_episode(policy, ExternalEnv(ex, horizon=horizon), perception, rng, greedy=True)
        guesses.append(traj.final_store)
        hits += int(traj.correct)
    return hits / len(examples), guesses


def write_eval_report(
    csv_path: str | Path,
    summary_path: str | Path,
    task: str,
    examples: list[LabeledExample],
    guesses: list[int],
    accuracy: float,
    seed: int,
) -> None:
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["example_id", "answer", "guess", "correct"])
        for i, (ex, g) in enumerate(zip(examples, guesses)):
            w.writerow([i, ex.answer, g, int(g == ex.answer)])
    with open(summary_path, "w") as f:
        json.dump(
            {"task": task, "n_examples": len(examples), "accuracy": accuracy, "seed": seed},
            f,
            indent=2,
        )
        f.write("\n")
