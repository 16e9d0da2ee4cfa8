"""Figure rendering for the quantum Brownian motion simulator's output files."""

__version__ = "0.1.0"

from .figures import FigureSpec, render
from .gridio import SchemaError, read_grid, read_timeseries_csv

__all__ = ["FigureSpec", "render", "SchemaError", "read_grid", "read_timeseries_csv"]
