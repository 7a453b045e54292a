"""Figure generation for sample-efficiency sweep results."""
from .curves import CurveError, CurveSpec, Series, curve_table, read_rows, render_curves

__all__ = [
    "CurveError",
    "CurveSpec",
    "Series",
    "curve_table",
    "read_rows",
    "render_curves",
]
