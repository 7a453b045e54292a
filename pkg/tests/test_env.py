"""Environment coupling tests: reward clock, returns, rollout records."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varl.data import LabeledExample, Task, compose_scene, synthetic_bank
from varl.env import (
    DEFAULT_HORIZON,
    ExternalEnv,
    StepRecord,
    Trajectory,
    discounted_returns,
    evaluate,
    reward,
    run_episode,
    write_eval_report,
)
from varl.interface import Action
from varl.perception import StubPerception


def make_example(answer: int, task: Task = Task.SUM, digits=(3, 4)) -> LabeledExample:
    return LabeledExample(
        image=np.zeros((56, 56), dtype=np.uint8),
        task=task,
        digits=list(digits),
        op_letter=None,
        answer=answer,
        class_index=min(answer, 100),
        occupancy=np.zeros((2, 2), dtype=bool),
        placements={},
    )


class IdlePolicy:
    """Always presses UP at the top edge; the store never moves off 0."""

    def initial_hidden(self):
        return 0

    def act(self, obs, hidden, rng, greedy):
        return Action.UP, math.log(1.0), 0.0, hidden + 1


class BrokenPolicy:
    def initial_hidden(self):
        return None

    def act(self, obs, hidden, rng, greedy):
        return Action.UP, float("nan"), 0.0, hidden


# ---------------------------------------------------------------------------
# reward schedule


def test_reward_schedule():
    assert reward(5, False, False, 30) == -1.0 / 30
    assert reward(29, True, False, 30) == -1.0
    for t in (0, 13, 29):
        assert reward(t, t == 29, True, 30) == 0.0


def test_reward_bounds_and_range_check():
    for t in range(30):
        for is_final in (False, True):
            for correct in (False, True):
                assert -1.0 <= reward(t, is_final, correct, 30) <= 0.0
    with pytest.raises(ValueError):
        reward(30, True, False, 30)
    with pytest.raises(ValueError):
        reward(-1, False, False, 30)


def test_env_validation():
    ex = make_example(7)
    with pytest.raises(ValueError):
        ExternalEnv(ex, horizon=0)
    with pytest.raises(ValueError):
        ExternalEnv(ex, discount=0.0)
    with pytest.raises(ValueError):
        ExternalEnv(ex, discount=1.5)
    assert ExternalEnv(ex).horizon == DEFAULT_HORIZON


# ---------------------------------------------------------------------------
# discounted returns


def test_returns_hand_recursion():
    assert discounted_returns([1.0, 1.0, 1.0], 0.5) == [1.75, 1.5, 1.0]


def test_returns_single_and_constant():
    assert discounted_returns([-0.25], 0.9) == [-0.25]
    c = -1.0 / 30
    out = discounted_returns([c] * 30, 1.0)
    assert out[0] == c * 30


def test_returns_empty_rejected():
    with pytest.raises(ValueError):
        discounted_returns([], 1.0)


@pytest.mark.parametrize("gamma", [0.5, 0.9, 0.99, 1.0])
def test_returns_match_bruteforce_powers(gamma):
    rng = np.random.default_rng(0)
    for _ in range(20):
        rewards = rng.uniform(-1, 1, size=rng.integers(1, 40)).tolist()
        got = discounted_returns(rewards, gamma)
        for t in range(len(rewards)):
            want = sum(gamma ** (i - t) * rewards[i] for i in range(t, len(rewards)))
            assert abs(got[t] - want) < 1e-9


@given(
    rewards=st.lists(st.floats(min_value=-1.0, max_value=0.0), min_size=1, max_size=40),
    gamma=st.sampled_from([0.5, 0.9, 1.0]),
)
@settings(max_examples=200, deadline=None)
def test_returns_recursion_property(rewards, gamma):
    out = discounted_returns(rewards, gamma)
    for t in range(len(rewards) - 1):
        assert abs(out[t] - (rewards[t] + gamma * out[t + 1])) < 1e-9
    assert abs(out[-1] - rewards[-1]) < 1e-15


# ---------------------------------------------------------------------------
# episode rollout


def test_trajectory_length_and_records():
    env = ExternalEnv(make_example(7))
    traj = run_episode(IdlePolicy(), env, StubPerception(), np.random.default_rng(0))
    assert len(traj.steps) == 30
    assert traj.final_store == 0
    assert not traj.correct
    for s in traj.steps:
        assert s.observation.shape == (23,)
        assert s.advantage == s.ret - s.value_estimate


def test_all_incorrect_return_is_exact():
    env = ExternalEnv(make_example(7), discount=1.0)
    traj = run_episode(IdlePolicy(), env, StubPerception(), np.random.default_rng(0))
    assert traj.steps[0].ret == -59.0 / 30.0
    assert traj.steps[-1].reward == -1.0


def test_correct_from_start_all_zero_rewards():
    env = ExternalEnv(make_example(0))  # store starts at the right answer
    traj = run_episode(IdlePolicy(), env, StubPerception(), np.random.default_rng(0))
    assert all(s.reward == 0.0 for s in traj.steps)
    assert traj.steps[0].ret == 0.0
    assert traj.correct


def test_hidden_state_threaded_and_reset():
    class CountingPolicy(IdlePolicy):
        def __init__(self):
            self.last = None

        def act(self, obs, hidden, rng, greedy):
            self.last = hidden
            return Action.UP, 0.0, 0.0, hidden + 1

    p = CountingPolicy()
    env = ExternalEnv(make_example(7))
    run_episode(p, env, StubPerception(), np.random.default_rng(0))
    assert p.last == 29  # threaded through all 30 steps
    run_episode(p, env, StubPerception(), np.random.default_rng(0))
    assert p.last == 29  # fresh hidden each episode


def test_environment_image_is_static():
    bank = synthetic_bank(seed=0, digits_per_split=50, letters_per_split=20)
    rng = np.random.default_rng(1)
    ex = compose_scene(rng, bank.digits_train, bank.letters_train, Task.SUM, n=2)
    before = ex.image.tobytes()

    class BusyPolicy(IdlePolicy):
        def act(self, obs, hidden, rng_, greedy):
            a = Action(int(rng_.integers(0, 12)))
            return a, 0.0, 0.0, hidden

    stub = StubPerception()
    run_episode(BusyPolicy(), ExternalEnv(ex), stub, np.random.default_rng(2))
    assert ex.image.tobytes() == before


def test_nonfinite_policy_output_aborts():
    env = ExternalEnv(make_example(7))
    with pytest.raises(FloatingPointError, match="non-finite"):
        run_episode(BrokenPolicy(), env, StubPerception(), np.random.default_rng(0))


def test_trace_collects_one_line_per_step():
    env = ExternalEnv(make_example(7))
    trace = []
    run_episode(IdlePolicy(), env, StubPerception(), np.random.default_rng(0), trace=trace)
    assert len(trace) == 30
    assert trace[0] == "0, up, 0, 0, 0, -1, -1"


# ---------------------------------------------------------------------------
# evaluation


def test_evaluate_degenerate_policy_counts_zero_answers():
    examples = [make_example(a) for a in (0, 3, 0, 5, 9, 0)]
    acc, guesses = evaluate(IdlePolicy(), examples, StubPerception(), seed=0)
    assert guesses == [0] * 6
    assert acc == 3 / 6


def test_evaluate_deterministic_and_validates():
    examples = [make_example(a) for a in (0, 1, 2)]
    a1 = evaluate(IdlePolicy(), examples, StubPerception(), seed=5)
    a2 = evaluate(IdlePolicy(), examples, StubPerception(), seed=5)
    assert a1 == a2
    with pytest.raises(ValueError):
        evaluate(IdlePolicy(), [], StubPerception())


def test_eval_report_files(tmp_path):
    examples = [make_example(a) for a in (0, 3)]
    acc, guesses = evaluate(IdlePolicy(), examples, StubPerception(), seed=0)
    csv_path = tmp_path / "eval.csv"
    json_path = tmp_path / "summary.json"
    write_eval_report(csv_path, json_path, "sum", examples, guesses, acc, seed=0)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "example_id,answer,guess,correct"
    assert lines[1] == "0,0,0,1"
    assert lines[2] == "1,3,0,0"
    import json

    summary = json.loads(json_path.read_text())
    assert summary == {"task": "sum", "n_examples": 2, "accuracy": 0.5, "seed": 0}
