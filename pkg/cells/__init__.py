"""Fast-scale cell problems: pseudo-stationary density, Poisson correctors, L₀."""
from cells.analytic import GaussianCell, gaussian_cell
from cells.density import FastDensity, GaussianFastDensity, TabulatedFastDensity
from cells.grid import DEFAULT_NODES, MIN_NODES, FastGrid, fast_grid
from cells.solver import (
    ANALYTIC_OU,
    BACKENDS,
    NUMERIC_FD,
    CellSolution,
    apply_L0,
    solve_cell,
    solve_poisson,
    solve_pseudo_stationary,
    stationary_density,
)
from cells.table import CellTable

__all__ = [
    "ANALYTIC_OU",
    "BACKENDS",
    "CellSolution",
    "CellTable",
    "DEFAULT_NODES",
    "FastDensity",
    "FastGrid",
    "GaussianCell",
    "GaussianFastDensity",
    "MIN_NODES",
    "NUMERIC_FD",
    "TabulatedFastDensity",
    "apply_L0",
    "fast_grid",
    "gaussian_cell",
    "solve_cell",
    "solve_poisson",
    "solve_pseudo_stationary",
    "stationary_density",
]
