"""Learning-curve figures from sweep result CSVs.

The input contract is the sweep tool's merged CSV with the exact header
``task,model,sample_size,seed,test_accuracy,wall_seconds``; this package
reads that file format and nothing else from the training side.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

SWEEP_COLUMNS = ("task", "model", "sample_size", "seed", "test_accuracy", "wall_seconds")

# fixed colors per model so lines are comparable across figures
MODEL_COLORS = {
    "rl": "#1f77b4",
    "lenet32": "#ff7f0e",
    "lenet128": "#2ca02c",
    "lenet512": "#d62728",
    "oracle": "#9467bd",
}
_FALLBACK_COLORS = ("#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
_MODEL_ORDER = ("rl", "lenet32", "lenet128", "lenet512", "oracle")


class CurveError(ValueError):
    """Unusable input: missing rows, wrong header, or unknown task/model."""


@dataclass(frozen=True)
class CurveSpec:
    csv_paths: tuple[Path, ...]
    tasks: tuple[str, ...]
    out: Path
    log_x: bool = True
    title: str | None = None

    def __post_init__(self):
        if not self.csv_paths:
            raise CurveError("at least one CSV path is required")
        if not self.tasks:
            raise CurveError("at least one task is required")


@dataclass
class Series:
    """One model's curve within one task panel."""

    task: str
    model: str
    sample_sizes: list[int] = field(default_factory=list)
    mean: list[float] = field(default_factory=list)
    lo: list[float] = field(default_factory=list)
    hi: list[float] = field(default_factory=list)


def read_rows(csv_paths: tuple[Path, ...]) -> list[dict]:
    rows: list[dict] = []
    for path in csv_paths:
        path = Path(path)
        if not path.exists():
            raise CurveError(f"CSV not found: {path}")
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if tuple(reader.fieldnames or ()) != SWEEP_COLUMNS:
                raise CurveError(
                    f"unknown columns in {path}: expected {','.join(SWEEP_COLUMNS)}, "
                    f"got {','.join(reader.fieldnames or ['<none>'])}"
                )
            for row in reader:
                rows.append(
                    {
                        "task": row["task"],
                        "model": row["model"],
                        "sample_size": int(row["sample_size"]),
                        "seed": int(row["seed"]),
                        "test_accuracy": float(row["test_accuracy"]),
                    }
                )
    if not rows:
        raise CurveError(f"no data rows in {', '.join(str(p) for p in csv_paths)}")
    return rows


def _model_sort_key(model: str):
    try:
        return (0, _MODEL_ORDER.index(model))
    except ValueError:
        return (1, model)


def model_color(model: str, all_models: list[str]) -> str:
    if model in MODEL_COLORS:
        return MODEL_COLORS[model]
    extra = [m for m in sorted(all_models) if m not in MODEL_COLORS]
    return _FALLBACK_COLORS[extra.index(model) % len(_FALLBACK_COLORS)]


def curve_table(rows: list[dict], task: str) -> list[Series]:
    """Aggregate seed repeats into mean and min-max envelope per model."""
    cells: dict[tuple[str, int], list[float]] = {}
    for row in rows:
        if row["task"] != task:
            continue
        cells.setdefault((row["model"], row["sample_size"]), []).append(row["test_accuracy"])
    if not cells:
        raise CurveError(f"task {task!r} has no rows in the CSV")
    out: dict[str, Series] = {}
    for (model, size), values in sorted(cells.items(), key=lambda kv: (_model_sort_key(kv[0][0]), kv[0][1])):
        series = out.setdefault(model, Series(task=task, model=model))
        series.sample_sizes.append(size)
        series.mean.append(math.fsum(values) / len(values))
        series.lo.append(min(values))
        series.hi.append(max(values))
    return list(out.values())


def render_curves(spec: CurveSpec):
    """Draw one panel per task and write SVG + PNG plus a data sidecar.

    Returns (figure, series list) so tests can inspect exactly what was drawn.
    """
    rows = read_rows(spec.csv_paths)
    tables = [curve_table(rows, task) for task in spec.tasks]  # validates tasks
    all_models = sorted({r["model"] for r in rows})

    matplotlib.rcParams["svg.hashsalt"] = "varlplots"
    k = len(spec.tasks)
    ncols = 1 if k == 1 else 2
    nrows = math.ceil(k / ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(5.2 * ncols, 3.9 * nrows), squeeze=False)
    flat_axes = axes.reshape(-1)
    for ax in flat_axes[k:]:
        ax.set_visible(False)

    for ax, task, table in zip(flat_axes, spec.tasks, tables):
        for series in table:
            color = model_color(series.model, all_models)
            ax.plot(series.sample_sizes, series.mean, marker="o", color=color, label=series.model)
            ax.fill_between(series.sample_sizes, series.lo, series.hi, color=color, alpha=0.2, linewidth=0)
        if spec.log_x:
            ax.set_xscale("log", base=2)
        ax.set_ylim(0.0, 1.0)
        ax.set_title(task)
        ax.set_xlabel("external training samples")
        ax.set_ylabel("test accuracy")
        ax.grid(True, alpha=0.3)
    flat_axes[0].legend(loc="upper left")
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()

    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    svg_path = out.with_suffix(".svg")
    png_path = out.with_suffix(".png")
    fig.savefig(svg_path, metadata={"Date": None})
    fig.savefig(png_path, dpi=150)
    series_list = [s for table in tables for s in table]
    sidecar = {
        "tasks": list(spec.tasks),
        "series": [
            {
                "task": s.task,
                "model": s.model,
                "sample_sizes": s.sample_sizes,
                "mean": s.mean,
                "lo": s.lo,
                "hi": s.hi,
            }
            for s in series_list
        ],
    }
    Path(str(svg_path) + ".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    return fig, series_list
