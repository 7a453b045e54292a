"""Oracle-policy and sweep tests."""
import itertools

import numpy as np
import pytest

from varl.baselines import BaselineConfig
from varl.data import Task, task_answer
from varl.env import ExternalEnv, run_episode
from varl.harness import (
    DEFAULT_SAMPLE_SIZES,
    ExperimentSpec,
    OraclePolicy,
    SWEEP_HEADER,
    default_rl_config,
    oracle_accuracy,
    read_sweep_rows,
    run_sweep,
    sweep_test_set,
    train_set_seed,
)
from varl.perception import StubPerception


def run_oracle(example, horizon: int = 30) -> int:
    traj = run_episode(
        OraclePolicy(),
        ExternalEnv(example, horizon=horizon),
        StubPerception(),
        np.random.default_rng(0),
    )
    return traj.final_store


def test_oracle_sum_pair(shared_bank, scene_builder):
    ex = scene_builder(
        shared_bank, Task.SUM, {(0, 0): ("digit", 3), (1, 1): ("digit", 4)}
    )
    assert run_oracle(ex) == 7


def test_oracle_prod_loads_first_then_multiplies(shared_bank, scene_builder):
    ex = scene_builder(
        shared_bank, Task.PROD, {(1, 0): ("digit", 2), (0, 1): ("digit", 5)}
    )
    assert run_oracle(ex) == 10


def test_oracle_min_with_zero(shared_bank, scene_builder):
    # plus-load then min; starting MIN directly on store=0 would be sticky
    ex = scene_builder(
        shared_bank, Task.MIN, {(0, 0): ("digit", 9), (0, 1): ("digit", 0)}
    )
    assert run_oracle(ex) == 0
    ex2 = scene_builder(
        shared_bank, Task.MIN, {(0, 0): ("digit", 9), (0, 1): ("digit", 4)}
    )
    assert run_oracle(ex2) == 4


@pytest.mark.parametrize("task", [Task.SUM, Task.PROD, Task.MAX, Task.MIN])
def test_oracle_random_scenes_match_task_answer(task, shared_bank, scene_builder):
    rng = np.random.default_rng(7)
    cells = [(x, y) for x in range(2) for y in range(2)]
    for _ in range(40):
        count = int(rng.integers(2, 4))
        chosen = [cells[i] for i in rng.choice(4, size=count, replace=False)]
        values = rng.integers(0, 10, size=count)
        placement = {c: ("digit", int(v)) for c, v in zip(chosen, values)}
        ex = scene_builder(shared_bank, task, placement, rng=rng)
        assert run_oracle(ex) == task_answer(task, ex.digits), placement


def test_oracle_combined_every_letter_position(shared_bank, scene_builder):
    rng = np.random.default_rng(8)
    cells = [(x, y) for x in range(2) for y in range(2)]
    for letter_cell in cells:
        for op_class in range(4):
            others = [c for c in cells if c != letter_cell]
            rng.shuffle(others)
            digit_cells = others[:2]
            values = rng.integers(0, 10, size=2)
            placement = {letter_cell: ("letter", op_class)}
            placement.update({c: ("digit", int(v)) for c, v in zip(digit_cells, values)})
            ex = scene_builder(shared_bank, Task.COMBINED, placement, rng=rng)
            assert run_oracle(ex) == ex.answer, placement


def test_oracle_idles_on_empty_salience(shared_bank, scene_builder):
    ex = scene_builder(shared_bank, Task.SUM, {(0, 0): ("digit", 3), (1, 0): ("digit", 2)})

    class BlindStub(StubPerception):
        def salience_map(self, scene, fx, fy):
            return np.zeros((2, 2))

    traj = run_episode(
        OraclePolicy(), ExternalEnv(ex), BlindStub(), np.random.default_rng(0)
    )
    assert traj.final_store == 0


def test_oracle_accuracy_perfect_on_stub(shared_bank, scene_builder):
    rng = np.random.default_rng(9)
    examples = []
    cells = [(x, y) for x in range(2) for y in range(2)]
    for _ in range(25):
        chosen = [cells[i] for i in rng.choice(4, size=2, replace=False)]
        values = rng.integers(0, 10, size=2)
        examples.append(
            scene_builder(
                shared_bank, Task.MAX, {c: ("digit", int(v)) for c, v in zip(chosen, values)}, rng=rng
            )
        )
    assert oracle_accuracy(examples, StubPerception()) == 1.0


# ---------------------------------------------------------------------------
# experiment spec and sweep


def test_experiment_spec_validation(tmp_path):
    spec = ExperimentSpec(task=Task.SUM, output_dir=tmp_path)
    assert spec.sample_sizes == DEFAULT_SAMPLE_SIZES
    with pytest.raises(ValueError, match="increasing"):
        ExperimentSpec(task=Task.SUM, output_dir=tmp_path, sample_sizes=(16, 16))
    with pytest.raises(ValueError, match="repeats"):
        ExperimentSpec(task=Task.SUM, output_dir=tmp_path, repeats=0)
    with pytest.raises(ValueError, match="unknown models"):
        ExperimentSpec(task=Task.SUM, output_dir=tmp_path, models=("resnet",))


def test_default_rl_config_recipe():
    config = default_rl_config()
    assert config.curriculum
    assert 0.0 < config.entropy_decay < 1.0
    assert config.total_updates <= 30_000
    assert config.eval_every == 0


def test_train_seed_cells_are_distinct():
    seeds = {
        train_set_seed(size, seed)
        for size, seed in itertools.product(DEFAULT_SAMPLE_SIZES, range(3))
    }
    assert len(seeds) == len(DEFAULT_SAMPLE_SIZES) * 3


def test_sweep_baseline_only(tmp_path, shared_bank):
    spec = ExperimentSpec(
        task=Task.SUM,
        output_dir=tmp_path / "sweep",
        sample_sizes=(4, 8),
        repeats=1,
        models=("lenet32",),
    )
    config = BaselineConfig(epochs=2, batch_size=4, patience=1)
    csv_path = run_sweep(
        spec, shared_bank, baseline_config=config, test_set_size=12
    )
    text = csv_path.read_text()
    lines = text.strip().splitlines()
    assert lines[0] == SWEEP_HEADER
    assert len(lines) == 3
    rows = read_sweep_rows(csv_path)
    assert [(r["model"], r["sample_size"], r["seed"]) for r in rows] == [
        ("lenet32", 4, 0),
        ("lenet32", 8, 0),
    ]
    assert all(0.0 <= r["test_accuracy"] <= 1.0 for r in rows)
    # resumability: a second run recomputes nothing and reproduces the bytes
    again = run_sweep(spec, shared_bank, baseline_config=config, test_set_size=12)
    assert again.read_text() == text


def test_sweep_oracle_rows(tmp_path, shared_bank):
    spec = ExperimentSpec(
        task=Task.MAX,
        output_dir=tmp_path / "sweep",
        sample_sizes=(4,),
        repeats=2,
        models=("oracle",),
    )
    csv_path = run_sweep(spec, shared_bank, perception=StubPerception(), test_set_size=10)
    rows = read_sweep_rows(csv_path)
    assert len(rows) == 2
    assert all(r["test_accuracy"] == 1.0 for r in rows)


def test_sweep_requires_perception_for_rl(tmp_path, shared_bank):
    spec = ExperimentSpec(
        task=Task.SUM, output_dir=tmp_path, sample_sizes=(4,), repeats=1, models=("rl",)
    )
    with pytest.raises(ValueError, match="perception"):
        run_sweep(spec, shared_bank)


def test_sweep_test_set_is_pinned(tmp_path, shared_bank):
    spec = ExperimentSpec(task=Task.SUM, output_dir=tmp_path, sample_sizes=(4,), repeats=1)
    a = sweep_test_set(spec, shared_bank, count=6)
    b = sweep_test_set(spec, shared_bank, count=6)
    assert [ex.answer for ex in a] == [ex.answer for ex in b]
    assert all(np.array_equal(x.image, y.image) for x, y in zip(a, b))


def test_read_sweep_rows_rejects_foreign_header(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError, match="header"):
        read_sweep_rows(bad)
