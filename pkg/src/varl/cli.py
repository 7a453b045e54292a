"""Command-line front end: data generation, training, evaluation, sweeps.

Every option can come from a TOML or JSON config file (``--config``), with
command-line flags taking precedence.  All randomness is seeded; the data
directory for real glyph files comes from ``--data-dir`` or the
``VARL_DATA_DIR`` environment variable, with synthetic glyphs as fallback.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .baselines import BaselineConfig, evaluate_baseline, train_baseline
from .controller import ControllerPolicy, load_controller, save_controller
from .data import (
    DatasetSpec,
    Task,
    default_bank,
    load_dataset,
    make_dataset,
    save_dataset,
)
from .env import ExternalEnv, evaluate, run_episode, write_eval_report
from .harness import ExperimentSpec, OraclePolicy, oracle_accuracy, run_sweep
from .perception import (
    Perception,
    PretrainConfig,
    StubPerception,
    make_salience_scenes,
    pretrain_classifier,
    pretrain_salience,
)
from .serialize import save_arrays
from .trainer import TrainConfig, evaluate_batch, train

TASK_CHOICES = [t.value for t in Task]
EVAL_SEED_OFFSET = 7_700_000

# flags that must end up set, via command line or config file
REQUIRED = {
    "gen-data": ("task", "out"),
    "pretrain": ("out",),
    "train-rl": ("task",),
    "train-baseline": ("task",),
    "eval": ("task", "controller"),
    "oracle-eval": ("task",),
    "sweep": ("task", "out"),
}


def _load_config_file(argv: list[str]) -> dict:
    """Pull --config out of argv by hand so its values can act as defaults."""
    for i, arg in enumerate(argv):
        if arg == "--config":
            if i + 1 >= len(argv):
                return {}
            path = Path(argv[i + 1])
        elif arg.startswith("--config="):
            path = Path(arg.split("=", 1)[1])
        else:
            continue
        if not path.exists():
            raise SystemExit(f"config file not found: {path}")
        if path.suffix == ".json":
            return json.loads(path.read_text())
        with open(path, "rb") as f:
            return tomllib.load(f)
    return {}


def _bank(args, parser):
    data_dir = args.data_dir or os.environ.get("VARL_DATA_DIR")
    try:
        return default_bank(data_dir, seed=args.seed)
    except FileNotFoundError as exc:
        parser.error(str(exc))


def _perception_for(args, parser):
    if getattr(args, "stub", False):
        return StubPerception(n=args.n)
    if not args.perception:
        parser.error("a --perception checkpoint (or --stub) is required")
    path = Path(args.perception)
    if not path.exists():
        parser.error(f"perception checkpoint not found: {path}")
    return Perception.load(path)


def _dataset(args, bank, split: str, count: int, seed: int):
    digit_counts = tuple(int(x) for x in str(args.digit_counts).split(","))
    spec = DatasetSpec(
        task=Task(args.task),
        n=args.n,
        sample_count=count,
        seed=seed,
        split=split,
        digit_counts=digit_counts,
    )
    return make_dataset(spec, bank)


def _train_examples(args, parser, bank):
    if args.train_data:
        path = Path(args.train_data)
        if not path.exists():
            parser.error(f"training data not found: {path}")
        return load_dataset(path)
    return _dataset(args, bank, "train", args.train_samples, args.seed)


def _print_trace(policy, example, perception) -> None:
    trace: list[str] = []
    run_episode(
        policy, ExternalEnv(example), perception, np.random.default_rng(0), greedy=True, trace=trace
    )
    print("t, action, fovea_x, fovea_y, store, op, digit")
    for line in trace:
        print(line)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, parser) -> int:
    bank = _bank(args, parser)
    examples = _dataset(args, bank, args.split, args.count, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(args.out, examples, source=bank.source)
    print(f"wrote {len(examples)} {args.task} examples to {args.out}")
    return 0


def cmd_pretrain(args, parser) -> int:
    bank = _bank(args, parser)
    config = PretrainConfig(seed=args.seed, max_epochs=args.max_epochs)
    digit_params, digit_acc = pretrain_classifier(bank.digits_train, 10, config)
    print(f"digit classifier: held-out accuracy {digit_acc:.4f}")
    op_params, op_acc = pretrain_classifier(bank.letters_train, 4, config)
    print(f"op classifier: held-out accuracy {op_acc:.4f}")
    scenes = make_salience_scenes(bank, "train", args.salience_scenes, args.n, args.seed)
    salience_params, sal_acc = pretrain_salience(scenes, config, n=args.n)
    print(f"salience detector: held-out per-cell accuracy {sal_acc:.4f}")
    bundle = Perception(digit_params, op_params, salience_params, n=args.n)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    bundle.save(args.out)
    print(f"saved perception bundle to {args.out}")
    return 0


def cmd_train_rl(args, parser) -> int:
    bank = _bank(args, parser)
    perception = _perception_for(args, parser)
    examples = _train_examples(args, parser, bank)
    eval_examples = None
    if args.eval_count:
        eval_examples = _dataset(args, bank, "test", args.eval_count, args.seed + EVAL_SEED_OFFSET)
    config = TrainConfig(
        batch_size=args.batch_size,
        gamma=args.gamma,
        value_weight=args.value_weight,
        entropy_weight=args.entropy_weight,
        learning_rate=args.learning_rate,
        total_updates=args.updates,
        eval_every=args.eval_every,
        seed=args.seed,
        horizon=args.horizon,
        curriculum=args.curriculum,
        entropy_decay=args.entropy_decay,
    )
    params, curve = train(config, examples, perception, eval_examples, out_dir=args.out)
    if curve:
        last = curve[-1]
        print(
            f"final: update {last['update']} mean_return {last['mean_return']:.4f} "
            f"eval_accuracy {last['eval_accuracy']:.4f}"
        )
    if args.out:
        print(f"checkpoints and train_log.csv in {args.out}")
    return 0


def cmd_train_baseline(args, parser) -> int:
    bank = _bank(args, parser)
    examples = _train_examples(args, parser, bank)
    config = BaselineConfig(
        fc_units=args.fc_units,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    params, report = train_baseline(examples, config)
    print(f"train accuracy {report['train_accuracy']:.4f} val accuracy {report['val_accuracy']:.4f}")
    if args.test_count:
        test_set = _dataset(args, bank, "test", args.test_count, args.seed + EVAL_SEED_OFFSET)
        print(f"test accuracy {evaluate_baseline(params, test_set):.4f}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        save_arrays(args.out, {f"lenet/{k}": v.data for k, v in params.items()})
        print(f"saved baseline parameters to {args.out}")
    return 0


def cmd_eval(args, parser) -> int:
    bank = _bank(args, parser)
    perception = _perception_for(args, parser)
    ctrl_path = Path(args.controller)
    if not ctrl_path.exists():
        parser.error(f"controller checkpoint not found: {ctrl_path}")
    params = load_controller(ctrl_path)
    examples = _dataset(args, bank, "test", args.count, args.seed + EVAL_SEED_OFFSET)
    if args.trace:
        _print_trace(ControllerPolicy(params), examples[0], perception)
    accuracy, guesses = evaluate_batch(params, examples, perception)
    print(f"accuracy {accuracy:.4f} over {len(examples)} examples")
    if args.report_csv or args.report_json:
        csv_path = args.report_csv or str(Path(args.report_json).with_suffix(".csv"))
        json_path = args.report_json or str(Path(args.report_csv).with_suffix(".json"))
        write_eval_report(csv_path, json_path, args.task, examples, guesses, accuracy, args.seed)
        print(f"reports: {csv_path} {json_path}")
    return 0


def cmd_oracle_eval(args, parser) -> int:
    bank = _bank(args, parser)
    perception = _perception_for(args, parser)
    examples = _dataset(args, bank, "test", args.count, args.seed + EVAL_SEED_OFFSET)
    if args.trace:
        _print_trace(OraclePolicy(), examples[0], perception)
    accuracy = oracle_accuracy(examples, perception, seed=args.seed)
    print(f"oracle accuracy {accuracy:.4f} over {len(examples)} examples")
    return 0


def cmd_sweep(args, parser) -> int:
    bank = _bank(args, parser)
    models = tuple(args.models.split(","))
    try:
        sizes = tuple(int(s) for s in str(args.sizes).split(","))
        spec = ExperimentSpec(
            task=Task(args.task),
            output_dir=Path(args.out),
            n=args.n,
            sample_sizes=sizes,
            repeats=args.repeats,
            models=models,
        )
    except ValueError as exc:
        parser.error(str(exc))
    perception = None
    if any(m in ("rl", "oracle") for m in models):
        perception = _perception_for(args, parser)
    rl_config = TrainConfig(
        batch_size=args.batch_size,
        entropy_weight=args.entropy_weight,
        learning_rate=args.learning_rate,
        total_updates=args.updates,
        eval_every=0,
        curriculum=args.curriculum,
        entropy_decay=args.entropy_decay,
    )
    baseline_config = BaselineConfig(epochs=args.epochs)
    csv_path = run_sweep(
        spec,
        bank,
        perception=perception,
        rl_config=rl_config,
        baseline_config=baseline_config,
        test_set_size=args.test_count,
        progress=print,
    )
    print(f"sweep results: {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=2, help="grid side length")
    p.add_argument("--data-dir", default=None, help="glyph data directory (or VARL_DATA_DIR)")
    p.add_argument("--config", default=None, help="TOML or JSON file with option defaults")


def _add_task(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=TASK_CHOICES, default=None)
    p.add_argument("--digit-counts", default="2,3", help="digits per scene, e.g. '2,3' or '1'")


def _add_train_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train-samples", type=int, default=128)
    p.add_argument("--train-data", default=None, help="pre-generated dataset file")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="varl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands: dict[str, argparse.ArgumentParser] = {}

    def add_parser(name, **kw):
        commands[name] = sub.add_parser(name, **kw)
        return commands[name]

    p = add_parser("gen-data", help="generate and cache a scene dataset")
    _add_task(p)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = add_parser("pretrain", help="train the perception networks")
    p.add_argument("--out", default=None, help="perception bundle path")
    p.add_argument("--max-epochs", type=int, default=20)
    p.add_argument("--salience-scenes", type=int, default=6000)
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = add_parser("train-rl", help="train the controller with actor-critic")
    _add_task(p)
    _add_train_source(p)
    p.add_argument("--perception", default=None)
    p.add_argument("--stub", action="store_true", help="use perfect lookup perception")
    p.add_argument("--updates", type=int, default=5000)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--entropy-weight", type=float, default=0.01)
    p.add_argument("--value-weight", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--horizon", type=int, default=30)
    p.add_argument(
        "--curriculum",
        action=argparse.BooleanOptionalAction,
        default=False,
        help="stage the training pool from easy scenes to the full set",
    )
    p.add_argument(
        "--entropy-decay",
        type=float,
        default=1.0,
        help="entropy-weight multiplier per 500 full-pool updates (1.0 = constant)",
    )
    p.add_argument("--eval-every", type=int, default=500)
    p.add_argument("--eval-count", type=int, default=200)
    p.add_argument("--out", default=None, help="checkpoint/log directory")
    _add_common(p)
    p.set_defaults(func=cmd_train_rl)

    p = add_parser("train-baseline", help="train a feedforward scene classifier")
    _add_task(p)
    _add_train_source(p)
    p.add_argument("--fc-units", type=int, choices=[32, 128, 512], default=128)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--test-count", type=int, default=500)
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_train_baseline)

    p = add_parser("eval", help="evaluate a trained controller")
    _add_task(p)
    p.add_argument("--controller", default=None)
    p.add_argument("--perception", default=None)
    p.add_argument("--stub", action="store_true")
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--report-csv", default=None)
    p.add_argument("--report-json", default=None)
    p.add_argument("--trace", action="store_true", help="print per-step interface trace")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = add_parser("oracle-eval", help="evaluate the scripted oracle policy")
    _add_task(p)
    p.add_argument("--perception", default=None)
    p.add_argument("--stub", action="store_true")
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--trace", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_oracle_eval)

    p = add_parser("sweep", help="sample-efficiency sweep over models and sizes")
    _add_task(p)
    p.add_argument("--models", default="rl,lenet32,lenet128,lenet512")
    p.add_argument("--sizes", default="16,32,64,128,256,512,1024,2048")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", default=None)
    p.add_argument("--perception", default=None)
    p.add_argument("--stub", action="store_true")
    p.add_argument("--updates", type=int, default=24000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--entropy-weight", type=float, default=0.01)
    p.add_argument(
        "--curriculum",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="stage each RL cell's training pool from easy scenes to the full set",
    )
    p.add_argument(
        "--entropy-decay",
        type=float,
        default=0.75,
        help="entropy-weight multiplier per 500 full-pool updates (1.0 = constant)",
    )
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--test-count", type=int, default=2000)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    return parser, commands


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    config = _load_config_file(argv)
    parser, commands = build_parser()
    if config:
        defaults = {str(k).replace("-", "_"): v for k, v in config.items()}
        for command in commands.values():
            command.set_defaults(**defaults)
    args = parser.parse_args(argv)
    sub = commands[args.command]
    for name in REQUIRED[args.command]:
        if getattr(args, name, None) is None:
            sub.error(f"--{name.replace('_', '-')} is required (flag or config file)")
    if getattr(args, "task", None) is not None and args.task not in TASK_CHOICES:
        sub.error(f"unknown task {args.task!r} (choose from {', '.join(TASK_CHOICES)})")
    return args.func(args, sub)


if __name__ == "__main__":
    sys.exit(main())
