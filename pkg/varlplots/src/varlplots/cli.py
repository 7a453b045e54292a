"""``plot-curves``: render learning-curve figures from a sweep CSV."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import matplotlib.pyplot as plt

from .curves import CurveError, CurveSpec, render_curves


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plot-curves",
        description="Accuracy-vs-sample-count curves, one panel per task, "
        "mean line with min-max band over seeds.",
    )
    parser.add_argument(
        "--csv", action="append", required=True, help="sweep results CSV (repeatable)"
    )
    parser.add_argument("--tasks", required=True, help="comma-separated task panels, e.g. sum,prod,max,min")
    parser.add_argument("--out", required=True, help="output figure path (.svg; a .png sibling is also written)")
    parser.add_argument("--linear-x", action="store_true", help="linear sample axis instead of log")
    parser.add_argument("--title", default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = CurveSpec(
            csv_paths=tuple(Path(p) for p in args.csv),
            tasks=tuple(t for t in args.tasks.split(",") if t),
            out=Path(args.out),
            log_x=not args.linear_x,
            title=args.title,
        )
        fig, series = render_curves(spec)
    except CurveError as exc:
        print(f"plot-curves: {exc}", file=sys.stderr)
        return 1
    plt.close(fig)
    print(f"wrote {Path(args.out).with_suffix('.svg')} and {Path(args.out).with_suffix('.png')} "
          f"({len(series)} series)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
