"""Actor-critic training of the controller on the coupled environment.

Rollouts are collected tape-free in lockstep across the batch, freezing
returns and advantages as plain numbers; the surrogate objective then
re-runs the controller on a tape over the recorded observations and
actions.  Keeping the advantage out of the taped graph is what guarantees
no gradient flows through it.

Also holds the enumerable-MDP oracles used to test that the estimator's
expectation equals the exact policy gradient.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor, add, exp, gather_rows, log_softmax, mul, mul_scalar, reshape, softmax, sub, sum_all
from .controller import forward, init_controller, sample_action, save_controller, step_batch
from .data import LabeledExample
from .env import discounted_returns, reward
from .interface import Action, encode_observation, encoding_length, get_glimpse, reset, update_interface
from .nn import param_list
from .optim import Optimizer
from .perception import TrainingDiverged

LOG_HEADER = ["update", "mean_return", "entropy", "value_loss", "eval_accuracy", "stage"]

# curriculum gate: advance when greedy accuracy on the current pool clears
# GATE_ACCURACY (checked every GATE_CHECK_INTERVAL updates), or after the
# stage's patience share of the budget runs out, whichever comes first
GATE_ACCURACY = 0.85
GATE_CHECK_INTERVAL = 50
STAGE_PATIENCE_MIN = 500
# entropy_decay is applied once per this many updates on the full pool
ENTROPY_DECAY_INTERVAL = 500
# decay never pushes the weight below this fraction of the configured one
ENTROPY_FLOOR_FRACTION = 0.2
# keep_best re-measures greedy training accuracy this often
KEEP_BEST_INTERVAL = 250


@dataclass
class TrainConfig:
    batch_size: int = 16
    gamma: float = 1.0
    value_weight: float = 0.5
    entropy_weight: float = 0.01
    learning_rate: float = 1e-3
    total_updates: int = 1000
    eval_every: int = 100
    seed: int = 0
    horizon: int = 30
    clip_norm: float | None = None
    optimizer: str = "adam"
    curriculum: bool = False
    entropy_decay: float = 1.0
    keep_best: bool = False

    def __post_init__(self):
        if self.value_weight <= 0:
            raise ValueError("value_weight must be > 0")
        if self.entropy_weight < 0:
            raise ValueError("entropy_weight must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.entropy_decay <= 1.0:
            raise ValueError("entropy_decay must be in (0, 1]")


@dataclass
class BatchStats:
    mean_return: float
    policy_term: float
    value_loss: float
    entropy: float
    train_accuracy_on_batch: float
    update_index: int


@dataclass
class Batch:
    """One collected rollout batch; every number here is a frozen constant."""

    observations: np.ndarray  # (T, N, obs_dim)
    actions: np.ndarray  # (T, N) int64
    rewards: np.ndarray  # (T, N)
    returns: np.ndarray  # (T, N)
    values: np.ndarray  # (T, N)
    advantages: np.ndarray  # (T, N)
    log_probs: np.ndarray  # (T, N)
    final_stores: np.ndarray  # (N,)
    correct: np.ndarray  # (N,) bool
    example_indices: np.ndarray  # (N,)


class _PrecomputedPerception:
    """Per-row stand-in that replays batched classification results."""

    __slots__ = ("digit_result", "op_result", "salience_result")

    def classify_digit(self, glimpse):
        return self.digit_result

    def classify_op(self, glimpse):
        return self.op_result

    def salience_map(self, scene, fovea_x, fovea_y):
        return self.salience_result


def _spawn(perception):
    return perception.spawn() if hasattr(perception, "spawn") else perception


def _apply_actions(states, actions, images, row_perceptions, base_perception):
    """Advance every row's interface state by one action.

    When the shared perception exposes batch classification, rows that
    classify this step are grouped into single network calls and the
    results replayed through the normal single-row update path.
    """
    proxies = [None] * len(states)
    if hasattr(base_perception, "classify_digit_batch"):
        for kind, attr in (
            (Action.CLASSIFY_DIGIT, "digit_result"),
            (Action.CLASSIFY_OP, "op_result"),
        ):
            rows = [k for k, a in enumerate(actions) if a == kind]
            if not rows:
                continue
            glimpses = np.stack(
                [get_glimpse(images[k], states[k].fovea_x, states[k].fovea_y) for k in rows]
            )
            if kind == Action.CLASSIFY_DIGIT:
                classes, probs = base_perception.classify_digit_batch(glimpses)
            else:
                classes, probs = base_perception.classify_op_batch(glimpses)
            for j, k in enumerate(rows):
                if proxies[k] is None:
                    proxies[k] = _PrecomputedPerception()
                setattr(proxies[k], attr, (int(classes[j]), probs[j]))
        sal_rows = [k for k, a in enumerate(actions) if a == Action.UPDATE_SALIENCE]
        if sal_rows:
            maps = base_perception.salience_map_batch(
                [images[k] for k in sal_rows],
                [states[k].fovea_x for k in sal_rows],
                [states[k].fovea_y for k in sal_rows],
            )
            for j, k in enumerate(sal_rows):
                if proxies[k] is None:
                    proxies[k] = _PrecomputedPerception()
                proxies[k].salience_result = maps[j]
    new_states = []
    for k, (state, action) in enumerate(zip(states, actions)):
        p = proxies[k] if proxies[k] is not None else row_perceptions[k]
        new_states.append(update_interface(state, images[k], Action(int(action)), p))
    return new_states


def episode_rng(seed: int, episode_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0xE9, episode_index])


def collect_batch(
    params,
    examples: list[LabeledExample],
    perception,
    config: TrainConfig,
    update_index: int,
) -> Batch:
    """Roll ``batch_size`` episodes in lockstep with the current policy.

    Each episode k owns the RNG stream (seed, update*N + k) and draws its
    example from it, so results are independent of batching layout.
    """
    if not examples:
        raise ValueError("empty training set")
    N, T = config.batch_size, config.horizon
    n = examples[0].n
    obs_dim = encoding_length(n)
    rngs = [episode_rng(config.seed, update_index * N + k) for k in range(N)]
    ex_idx = np.array([int(r.integers(0, len(examples))) for r in rngs])
    episode_examples = [examples[i] for i in ex_idx]
    images = [ex.image for ex in episode_examples]
    row_percepts = [_spawn(perception) for _ in range(N)]
    for p, ex in zip(row_percepts, episode_examples):
        p.bind(ex)

    states = [reset(n) for _ in range(N)]
    h = np.zeros((N, params["lstm_u"].data.shape[0]))
    c = np.zeros_like(h)
    observations = np.zeros((T, N, obs_dim))
    actions = np.zeros((T, N), dtype=np.int64)
    rewards = np.zeros((T, N))
    values = np.zeros((T, N))
    log_probs = np.zeros((T, N))
    for t in range(T):
        obs_t = np.stack([encode_observation(s) for s in states])
        probs, vals, (h, c) = step_batch(params, (h, c), obs_t)
        observations[t] = obs_t
        values[t] = vals
        for k in range(N):
            a, lp = sample_action(probs[k], rngs[k])
            actions[t, k] = a
            log_probs[t, k] = lp
        states = _apply_actions(states, actions[t], images, row_percepts, perception)
        for k in range(N):
            correct = states[k].store == episode_examples[k].answer
            rewards[t, k] = reward(t, t == T - 1, correct, T)

    returns = np.zeros((T, N))
    for k in range(N):
        returns[:, k] = discounted_returns(rewards[:, k].tolist(), config.gamma)
    final_stores = np.array([s.store for s in states])
    correct = np.array([s.store == ex.answer for s, ex in zip(states, episode_examples)])
    return Batch(
        observations=observations,
        actions=actions,
        rewards=rewards,
        returns=returns,
        values=values,
        advantages=returns - values,
        log_probs=log_probs,
        final_stores=final_stores,
        correct=correct,
        example_indices=ex_idx,
    )


def surrogate_loss(params, batch: Batch, config: TrainConfig) -> tuple[Tensor, BatchStats]:
    """Negated batch objective, averaged over the N*T step terms.

    The objective per step is log pi(a|h) * A - lambda (R - V)^2 + eta * H
    where A and R enter as constants from the batch; only log pi, V, and H
    live on the tape.
    """
    T, N, _ = batch.observations.shape
    h = Tensor(np.zeros((N, params["lstm_u"].data.shape[0])))
    c = Tensor(np.zeros_like(h.data))
    policy_sum = None
    value_sum = None
    entropy_sum = None

    def acc(total, term):
        return term if total is None else add(total, term)

    for t in range(T):
        logits, vals, h, c = forward(params, h, c, Tensor(batch.observations[t]))
        logp = gather_rows(log_softmax(logits), batch.actions[t])
        policy_sum = acc(policy_sum, sum_all(mul(logp, Tensor(batch.advantages[t]))))
        diff = sub(reshape(vals, (N,)), Tensor(batch.returns[t]))
        value_sum = acc(value_sum, sum_all(mul(diff, diff)))
        probs = softmax(logits)
        entropy_sum = acc(entropy_sum, mul_scalar(sum_all(mul(probs, log_softmax(logits))), -1.0))

    scale = 1.0 / (N * T)
    loss = add(
        add(
            mul_scalar(policy_sum, -scale),
            mul_scalar(value_sum, config.value_weight * scale),
        ),
        mul_scalar(entropy_sum, -config.entropy_weight * scale),
    )
    stats = BatchStats(
        mean_return=float(batch.returns[0].mean()),
        policy_term=float(policy_sum.data) * scale,
        value_loss=float(value_sum.data) * scale,
        entropy=float(entropy_sum.data) * scale,
        train_accuracy_on_batch=float(batch.correct.mean()),
        update_index=0,
    )
    return loss, stats


def check_divergence(stats: BatchStats, loss_value: float, update: int, config: TrainConfig) -> None:
    """Abort hopeless runs early instead of burning the full budget."""
    if not math.isfinite(loss_value):
        raise TrainingDiverged(f"non-finite loss {loss_value} at update {update}")
    if stats.entropy < 0.01 and update < 0.1 * config.total_updates:
        raise TrainingDiverged(
            f"entropy collapsed to {stats.entropy:.4f} at update {update} "
            f"(before 10% of {config.total_updates} updates)"
        )


def evaluate_batch(
    params,
    examples: list[LabeledExample],
    perception,
    horizon: int = 30,
    chunk: int = 256,
) -> tuple[float, list[int]]:
    """Greedy lockstep evaluation; returns (accuracy, per-example guesses)."""
    if not examples:
        raise ValueError("empty evaluation set")
    guesses: list[int] = []
    for start in range(0, len(examples), chunk):
        block = examples[start : start + chunk]
        B = len(block)
        n = block[0].n
        row_percepts = [_spawn(perception) for _ in range(B)]
        for p, ex in zip(row_percepts, block):
            p.bind(ex)
        images = [ex.image for ex in block]
        states = [reset(n) for _ in range(B)]
        h = np.zeros((B, params["lstm_u"].data.shape[0]))
        c = np.zeros_like(h)
        for t in range(horizon):
            obs_t = np.stack([encode_observation(s) for s in states])
            probs, _, (h, c) = step_batch(params, (h, c), obs_t)
            acts = np.argmax(probs, axis=1)
            states = _apply_actions(states, acts, images, row_percepts, perception)
        guesses.extend(s.store for s in states)
    hits = sum(int(g == ex.answer) for g, ex in zip(guesses, examples))
    return hits / len(examples), guesses


def scene_travel(example: LabeledExample) -> int:
    """Minimal total fovea travel visiting every occupied cell from the start.

    Brute-force over visiting orders with Manhattan step counts; grids are a
    handful of cells, so the permutation space is tiny.
    """
    cells = [(int(x), int(y)) for y, x in np.argwhere(example.occupancy)]
    best = float("inf")
    for order in itertools.permutations(cells):
        dist = 0
        px, py = 0, 0
        for cx, cy in order:
            dist += abs(cx - px) + abs(cy - py)
            px, py = cx, cy
        best = min(best, dist)
    return int(best) if cells else 0


def curriculum_pools(examples: list[LabeledExample]) -> list[list[LabeledExample]]:
    """Difficulty-staged views of one training set, easiest first.

    Uniform sampling over the raw set stalls: the coherent visit-and-fold
    program is too improbable under a near-uniform policy for its reward to
    be seen, and training sharpens lucky trajectories instead.  Worse, a
    coarse two-stage split leaves whole scene shapes undiscovered: the
    policy masters layouts one short choreography away from ones it knows
    and falls back to memorizing the rest.  So difficulty here is scene
    geometry: glyph count first, then the minimal fovea travel needed to
    visit every glyph (`scene_travel`), with a densest-reward rung up front
    (fewest-glyph scenes answerable by loading a single digit).  Pools are
    cumulative, so later stages rehearse earlier scenes; the last pool is
    always the full set, and rungs that add nothing are dropped, so a
    uniform-difficulty set degenerates to the plain single-pool loop.
    """
    if not examples:
        raise ValueError("empty training set")
    fewest = min(len(ex.digits) for ex in examples)
    single_load = [
        ex for ex in examples if len(ex.digits) == fewest and ex.answer in ex.digits
    ]
    starter = {id(ex) for ex in single_load}
    keyed = [((len(ex.digits), scene_travel(ex)), ex) for ex in examples]
    pools: list[list[LabeledExample]] = []
    for rung in [None, *sorted({key for key, _ in keyed})]:
        if rung is None:
            pool = single_load
        else:
            pool = [ex for key, ex in keyed if key <= rung or id(ex) in starter]
        if pool and (not pools or len(pool) > len(pools[-1])):
            pools.append(pool)
    return pools


def train(
    config: TrainConfig,
    examples: list[LabeledExample],
    perception,
    eval_examples: list[LabeledExample] | None = None,
    out_dir: str | Path | None = None,
) -> tuple[dict, list[dict]]:
    """Full training loop: collect, differentiate, step, periodically evaluate.

    Returns the trained parameters and the learning curve (one dict per
    evaluation point).  With ``out_dir`` set, writes ``train_log.csv`` and a
    checkpoint at every evaluation.

    With ``config.curriculum`` the collection pool is staged through
    ``curriculum_pools``: every ``GATE_CHECK_INTERVAL`` updates the current
    pool is evaluated greedily and the next stage opens at ``GATE_ACCURACY``,
    or after the stage's patience share of the budget, whichever comes
    first.  With ``config.entropy_decay`` < 1 the entropy weight is
    multiplied by that factor every ``ENTROPY_DECAY_INTERVAL`` updates spent
    on the full pool (floored at ``ENTROPY_FLOOR_FRACTION`` of the
    configured weight), so exploration pressure relaxes only once every
    example is in play.  With ``config.keep_best`` the greedy accuracy on
    the full training set is measured every ``KEEP_BEST_INTERVAL`` updates
    and the best parameters seen are what gets returned (and written as the
    final checkpoint): long low-entropy runs can fall off a cliff late, and
    the training set is the only honest signal for picking the summit.
    """
    if not examples:
        raise ValueError("empty training set")
    obs_dim = encoding_length(examples[0].n)
    params = init_controller(obs_dim, config.seed)
    plist = param_list(params)
    optimizer = Optimizer(
        kind=config.optimizer, learning_rate=config.learning_rate, clip_norm=config.clip_norm
    )

    pools = curriculum_pools(examples) if config.curriculum else [list(examples)]
    stage = 0
    in_stage = 0
    patience = max(STAGE_PATIENCE_MIN, config.total_updates // (2 * len(pools)))
    entropy_weight = config.entropy_weight
    full_pool_since: int | None = None
    best_train_acc = -1.0
    best_params: dict[str, np.ndarray] | None = None

    out_path = Path(out_dir) if out_dir is not None else None
    log_rows: list[list] = []
    curve: list[dict] = []
    for update in range(config.total_updates):
        batch = collect_batch(params, pools[stage], perception, config, update)
        with Tape() as tape:
            loss, stats = surrogate_loss(
                params, batch, replace(config, entropy_weight=entropy_weight)
            )
        stats.update_index = update
        check_divergence(stats, float(loss.data), update, config)
        grads = tape.gradient(loss, plist)
        optimizer.step(plist, grads)

        in_stage += 1
        if stage < len(pools) - 1 and (
            in_stage >= patience
            or (
                in_stage % GATE_CHECK_INTERVAL == 0
                and evaluate_batch(params, pools[stage], perception, config.horizon)[0]
                >= GATE_ACCURACY
            )
        ):
            stage += 1
            in_stage = 0
        if stage == len(pools) - 1 and config.entropy_decay < 1.0:
            if full_pool_since is None:
                full_pool_since = update
            steps = (update - full_pool_since) // ENTROPY_DECAY_INTERVAL
            entropy_weight = max(
                ENTROPY_FLOOR_FRACTION * config.entropy_weight,
                config.entropy_weight * config.entropy_decay**steps,
            )
        if config.keep_best and (
            (update + 1) % KEEP_BEST_INTERVAL == 0 or update + 1 == config.total_updates
        ):
            acc, _ = evaluate_batch(params, examples, perception, config.horizon)
            if acc > best_train_acc:
                best_train_acc = acc
                best_params = {k: v.data.copy() for k, v in params.items()}

        if config.eval_every and (update + 1) % config.eval_every == 0:
            if eval_examples:
                acc, _ = evaluate_batch(params, eval_examples, perception, config.horizon)
            else:
                acc = float("nan")
            point = {
                "update": update + 1,
                "mean_return": stats.mean_return,
                "entropy": stats.entropy,
                "value_loss": stats.value_loss,
                "eval_accuracy": acc,
                "stage": stage,
            }
            curve.append(point)
            log_rows.append([point[k] for k in LOG_HEADER])
            if out_path is not None:
                out_path.mkdir(parents=True, exist_ok=True)
                save_controller(out_path / f"controller_{update + 1:06d}.varl", params)
    if best_params is not None:
        for k, v in params.items():
            v.data = best_params[k]
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        with open(out_path / "train_log.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(LOG_HEADER)
            w.writerows(log_rows)
        save_controller(out_path / "controller_final.varl", params)
    return params, curve


# ---------------------------------------------------------------------------
# enumerable-MDP oracles


@dataclass
class TinyMdp:
    """Deterministic tabular MDP small enough to enumerate every trajectory."""

    n_states: int
    n_actions: int
    horizon: int
    next_state: np.ndarray  # (S, A) int
    step_reward: np.ndarray  # (S, A) float
    start_state: int = 0

    def __post_init__(self):
        if self.n_actions**self.horizon > 10_000:
            raise ValueError("trajectory space too large to enumerate")

    def trajectories(self):
        """Yield (action tuple, state sequence, reward sequence)."""
        for actions in itertools.product(range(self.n_actions), repeat=self.horizon):
            s = self.start_state
            states, rewards = [], []
            for a in actions:
                states.append(s)
                rewards.append(float(self.step_reward[s, a]))
                s = int(self.next_state[s, a])
            yield actions, states, rewards


def _pick(ls: Tensor, state: int, action: int, n_states: int, n_actions: int) -> Tensor:
    mask = np.zeros((n_states, n_actions))
    mask[state, action] = 1.0
    return sum_all(mul(ls, Tensor(mask)))


def enumerate_policy_gradient(mdp: TinyMdp, logits: Tensor, gamma: float) -> np.ndarray:
    """Exact gradient of J = sum_tau P(tau) G(tau) w.r.t. tabular logits."""
    with Tape() as tape:
        tape.watch(logits)
        ls = log_softmax(logits)
        total = None
        for actions, states, rewards in mdp.trajectories():
            logp = None
            for s, a in zip(states, actions):
                term = _pick(ls, s, a, mdp.n_states, mdp.n_actions)
                logp = term if logp is None else add(logp, term)
            ret = sum(gamma**t * r for t, r in enumerate(rewards))
            term = mul_scalar(exp(logp), ret)
            total = term if total is None else add(total, term)
    return tape.gradient(total, [logits])[0]


def expected_estimator_gradient(
    mdp: TinyMdp, logits: Tensor, gamma: float, baseline=None, discount_correction: bool = False
) -> np.ndarray:
    """Expectation over all trajectories of the score-function estimator.

    The plain form weights each log-prob term by the reward-to-go R_t (minus
    an optional baseline b_t); it matches the exact gradient when gamma is 1.
    For gamma < 1 the unbiased weighting needs an extra gamma^t factor,
    enabled by ``discount_correction``; without it the estimator follows the
    undiscounted-weighting convention and is biased for gamma < 1.
    """
    probs = np.exp(log_softmax(logits).data)
    expected = np.zeros_like(logits.data)
    for actions, states, rewards in mdp.trajectories():
        p_tau = float(np.prod([probs[s, a] for s, a in zip(states, actions)]))
        returns = discounted_returns(rewards, gamma)
        with Tape() as tape:
            tape.watch(logits)
            ls = log_softmax(logits)
            total = None
            for t, (s, a) in enumerate(zip(states, actions)):
                coeff = returns[t] - (baseline(t) if baseline is not None else 0.0)
                if discount_correction:
                    coeff *= gamma**t
                term = mul_scalar(_pick(ls, s, a, mdp.n_states, mdp.n_actions), coeff)
                total = term if total is None else add(total, term)
        expected += p_tau * tape.gradient(total, [logits])[0]
    return expected
