"""Convergence in epsilon, burn-in gaps and residual tables."""
import math

import numpy as np
import pytest

from averaging.reduced import compute_averaged_coefficients
from averaging.xt import XTGrid
from cells.density import GaussianFastDensity
from cells.grid import fast_grid
from cells.solver import ANALYTIC_OU
from cells.table import CellTable
from harness.checks import burn_in_diagnostic, convergence_check, ks_distance, residual_rows
from model.catalog import build_model


def _ou_average(model):
    xt = XTGrid(x_lo=[-4.0], x_hi=[4.0], T=model.T, x_nodes=9, time_dependent=False)
    cells = CellTable(model, fast_grid(model.domain, 129), ANALYTIC_OU, workers=1)
    return compute_averaged_coefficients(model.coeffs, None, cells, xt, workers=1)


def test_ks_distance():
    a = np.linspace(0.0, 1.0, 101)
    assert ks_distance(a, a) == 0.0
    assert ks_distance(a, a + 2.0) == 1.0


def test_convergence_rows_per_epsilon():
    model = build_model("ou", epsilon=0.5, T=0.5, burn_in=0.1)
    rows, verdicts = convergence_check(model, [0.5, 1.0], 300, 0.01, _ou_average(model), seed=4, workers=1)
    assert [r["epsilon"] for r in rows] == [1.0, 0.5]
    assert all(0.0 <= r["ks_X_T"] <= 1.0 for r in rows)
    assert [v.functional for v in verdicts] == ["X_T"]
    assert verdicts[0].details == {"eps=1": rows[0]["ks_X_T"], "eps=0.5": rows[1]["ks_X_T"]}


def test_burn_in_gap_without_burn_in_is_undefined():
    model = build_model("ou", epsilon=0.5, T=0.5)
    rows = burn_in_diagnostic(model, _ou_average(model), GaussianFastDensity(model.coeffs), 200, 0.01, seed=2, burn_ins=(0.0, 1.0))
    assert math.isnan(rows[0]["gap_t0"])
    assert math.isfinite(rows[0]["gap_T"])
    assert math.isfinite(rows[1]["gap_t0"])


def test_residual_rows_flag_large_values():
    rows = residual_rows("extended", {"forward_row": 1e-9, "forward_diag": 1e-3}, 1e-6)
    assert [r["name"] for r in rows] == ["forward_diag", "forward_row"]
    assert [r["ok"] for r in rows] == [False, True]
    assert rows[0]["threshold"] == pytest.approx(1e-6)
