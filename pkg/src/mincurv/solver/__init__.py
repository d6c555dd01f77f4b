"""Grid solver for the arrival-time equation and tools to inspect its output."""

from .grid import BOUNDARY, INTERIOR, OUTSIDE, Grid, ValueField, build_grid
from .scheme import (
    SchemeConfig,
    SolveError,
    SolveReport,
    ZeroField,
    cauchy_decreasing,
    dpp_operator,
    refine_study,
    solve,
    solve_body,
    solve_hierarchical,
)

__all__ = [
    "BOUNDARY", "INTERIOR", "OUTSIDE", "Grid", "ValueField", "build_grid",
    "SchemeConfig", "SolveError", "SolveReport", "ZeroField", "cauchy_decreasing",
    "dpp_operator", "refine_study", "solve", "solve_body", "solve_hierarchical",
]
