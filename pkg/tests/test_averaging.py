"""Averaged drift and diffusion on small slow grids with closed-form answers."""
import numpy as np
import pytest

from averaging.mu import GAUSSIAN, NUMERIC, MuField, slow_grid_for, solve_mu
from averaging.reduced import compute_averaged_coefficients
from averaging.xt import XTGrid, parse_box
from cells.grid import fast_grid
from cells.solver import ANALYTIC_OU, NUMERIC_FD
from cells.table import CellTable
from errors import ConfigurationError
from functionals.physics import reversed_comparable
from model.catalog import build_model
from model.comparable import BACKWARD, shifted_forward
from model.parity import ParityVector


def _xt():
    return XTGrid(x_lo=[-2.0], x_hi=[2.0], T=1.0, x_nodes=5, time_dependent=False)


def _average(model, comparable=None, backend=ANALYTIC_OU):
    f_tilde = comparable.f_tilde if comparable is not None and comparable.kind == BACKWARD else None
    variant = comparable.label if f_tilde is not None else ""
    cells = CellTable(model, fast_grid(model.domain, 129), backend, f_tilde=f_tilde, variant=variant, workers=1)
    return compute_averaged_coefficients(model.coeffs, comparable, cells, _xt(), workers=1)


def test_ou_reduced_coefficients():
    # w = -kappa x, A = sigma_x^2 + 2 E[y^2] / gamma = 3
    avg = _average(build_model("ou"))
    xs = _xt().x_points()
    assert avg.w_nodes[:, 0, 0] == pytest.approx(-xs[:, 0], abs=1e-6)
    assert avg.A_nodes[:, 0, 0, 0] == pytest.approx(np.full(5, 3.0), rel=1e-4)
    assert avg.w([0.3], 0.0)[0, 0] == pytest.approx(-0.3, abs=1e-6)


def test_ou_shifted_comparable():
    model = build_model("ou")
    avg = _average(model, shifted_forward(model.coeffs, 1.0))
    assert avg.w_comp_nodes - avg.w_nodes == pytest.approx(np.ones_like(avg.w_nodes), abs=1e-8)
    assert np.array_equal(avg.A_comp_nodes, avg.A_nodes)


def test_ou_numeric_backend_matches():
    avg = _average(build_model("ou"), backend=NUMERIC_FD)
    assert avg.A_nodes[:, 0, 0, 0] == pytest.approx(np.full(5, 3.0), rel=1e-2)


def test_underdamped_reduced_coefficients():
    # w = -k x / gamma, A = sigma_x^2 + 2 / gamma
    model = build_model("underdamped", {"k": 2.0, "gamma": 1.0, "sigma_x": 0.5})
    avg = _average(model)
    xs = _xt().x_points()[:, 0]
    assert avg.w_nodes[:, 0, 0] == pytest.approx(-2.0 * xs, abs=1e-6)
    assert avg.A_nodes[:, 0, 0, 0] == pytest.approx(np.full(5, 2.25), rel=1e-4)


def test_underdamped_reversed_diffusion_matches():
    model = build_model("underdamped")
    avg = _average(model, reversed_comparable(model.coeffs, ParityVector.parse("1, -1")))
    assert avg.kind == BACKWARD
    assert avg.diffusion_mismatch() < 1e-6
    assert avg.diagnostics["diffusion_mismatch"] == pytest.approx(avg.diffusion_mismatch())
    assert avg.w_comp_nodes == pytest.approx(avg.w_nodes, abs=1e-6)


def test_reduced_linear_fit():
    sde = _average(build_model("ou", {"shift": 0.5})).reduced_linear()
    assert sde.K[0, 0] == pytest.approx(-1.0, abs=1e-6)
    assert sde.Q[0, 0] == pytest.approx(3.0, rel=1e-4)
    assert sde.k(0.0)[0] == pytest.approx(0.5, abs=1e-6)


def test_export_csv(tmp_path):
    avg = _average(build_model("ou"))
    path = tmp_path / "averaged.csv"
    avg.export_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x1,t,w1,A11"
    assert len(lines) == 6


def test_parse_box():
    assert parse_box(None, 1) is None
    assert parse_box("3", 2).tolist() == [3.0, 3.0]
    with pytest.raises(ConfigurationError):
        parse_box("1,2,3", 2)


def test_reduced_density_backends_agree():
    # mu = N(1/2, 3/2) for the shifted OU
    model = build_model("ou", {"shift": 0.5})
    xt = XTGrid(x_lo=[-6.0], x_hi=[6.0], T=1.0, x_nodes=13, time_dependent=False)
    cells = CellTable(model, fast_grid(model.domain, 129), ANALYTIC_OU, workers=1)
    avg = compute_averaged_coefficients(model.coeffs, None, cells, xt, workers=1)
    x = np.array([[-1.0], [0.0], [0.5], [2.0]])
    exact = -(x - 0.5) / 1.5
    gaussian = MuField(avg, backend=GAUSSIAN).grad_log_mu(x, 0.0)
    numeric = MuField(avg, backend=NUMERIC).grad_log_mu(x, 0.0)
    assert gaussian == pytest.approx(exact, abs=1e-8)
    assert numeric == pytest.approx(exact, abs=1e-2)


def _mu_on(model, backend, half_width):
    xt = XTGrid(x_lo=[-half_width], x_hi=[half_width], T=1.0, x_nodes=9, time_dependent=False)
    cells = CellTable(model, fast_grid(model.domain, 129), backend, workers=1)
    avg = compute_averaged_coefficients(model.coeffs, None, cells, xt, workers=1)
    grid = slow_grid_for(avg)
    return avg, grid, solve_mu(avg, 0.0, grid, NUMERIC)


def _normal_on(grid, mean, var):
    x = grid.points[:, 0]
    out = np.exp(-0.5 * (x - mean) ** 2 / var)
    return out / grid.integrate(out)


def test_solve_mu_for_shifted_ou():
    _, grid, mu = _mu_on(build_model("ou", {"shift": 0.5}), ANALYTIC_OU, 6.0)
    assert grid.integrate(mu) == pytest.approx(1.0, abs=1e-10)
    assert mu == pytest.approx(_normal_on(grid, 0.5, 1.5), abs=2e-3)


def test_solve_mu_for_double_well():
    # w = -kappa x and A is constant in x, so mu = N(0, A / (2 kappa))
    avg, grid, mu = _mu_on(build_model("double_well"), NUMERIC_FD, 5.0)
    A0 = float(avg.A([0.0], 0.0)[0, 0, 0])
    assert avg.A([1.5], 0.0)[0, 0, 0] == pytest.approx(A0, rel=1e-3)
    assert np.allclose(mu, mu[::-1], atol=1e-6)
    assert mu == pytest.approx(_normal_on(grid, 0.0, A0 / 2.0), abs=5e-3)
