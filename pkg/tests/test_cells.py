"""Cell problems: pseudo-stationary density, Poisson correctors, the cell table and its cache."""
import numpy as np
import pytest
from sqlalchemy import create_engine, select
from sqlalchemy.orm import sessionmaker

from cells.cache import CellStore, model_cache_key
from cells.grid import FastGrid, fast_grid
from cells.solver import ANALYTIC_OU, BACKENDS, NUMERIC_FD, apply_L0, solve_cell, solve_poisson, solve_pseudo_stationary
from cells.table import CellTable
from db.base import Base
from db.models import CellCacheEntry
from errors import CenteringError, ConfigurationError, DependencyError
from model.catalog import build_model


@pytest.fixture
def session_factory():
    engine = create_engine("sqlite:///:memory:")
    Base.metadata.create_all(engine)
    return sessionmaker(bind=engine)


def _ou_cell(backend, x=0.5):
    model = build_model("ou")
    grid = fast_grid(model.domain, 257)
    return model, solve_cell(model.coeffs, [x], 0.0, grid, backend)


@pytest.mark.parametrize("backend", BACKENDS)
def test_ou_density_is_standard_normal(backend):
    _, sol = _ou_cell(backend)
    y = sol.grid.points[:, 0]
    assert sol.mass() == pytest.approx(1.0, abs=1e-10)
    assert sol.grid.integrate(y * sol.rho) == pytest.approx(0.0, abs=1e-8)
    assert sol.grid.integrate(y * y * sol.rho) == pytest.approx(1.0, rel=1e-2)
    assert np.all(sol.rho > 0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_ou_corrector_is_linear(backend):
    # -L0 phi = y with L0 = -y d/dy + d2/dy2 is solved by phi = y
    _, sol = _ou_cell(backend)
    y = sol.grid.points[:, 0]
    inner = np.abs(y) < 4.0
    assert np.max(np.abs(sol.phi[inner, 0] - y[inner])) < 1e-2
    assert abs(float(sol.centering(sol.phi[:, 0]))) < 1e-8


def test_backends_agree_on_ou():
    _, exact = _ou_cell(ANALYTIC_OU)
    _, numeric = _ou_cell(NUMERIC_FD)
    assert np.max(np.abs(exact.rho - numeric.rho)) < 1e-2


def test_uncentered_rhs_rejected():
    model, sol = _ou_cell(ANALYTIC_OU)
    with pytest.raises(CenteringError) as exc:
        solve_poisson(model.coeffs, [0.5], 0.0, sol.rho, np.ones(sol.grid.size), sol.grid, NUMERIC_FD)
    assert exc.value.defect == pytest.approx(1.0, rel=1e-6)


def test_grid_too_coarse():
    with pytest.raises(ConfigurationError):
        FastGrid(np.array([-1.0]), np.array([1.0]), nodes=65)


def test_double_well_density_is_symmetric():
    model = build_model("double_well")
    sol = solve_cell(model.coeffs, [0.0], 0.0, fast_grid(model.domain, 257), NUMERIC_FD)
    assert sol.mass() == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(sol.rho, sol.rho[::-1], atol=1e-6)


def test_table_counts_new_solves():
    model = build_model("ou")
    table = CellTable(model, fast_grid(model.domain, 129), ANALYTIC_OU, workers=1)
    points = [(np.array([0.0]), 0.0), (np.array([0.0]), 0.0), (np.array([1.0]), 0.0)]
    assert table.ensure(points) == 2
    assert table.ensure(points) == 0
    assert len(table) == 2
    assert (np.array([1.0]), 0.0) in table
    with pytest.raises(DependencyError):
        table.get([2.0], 0.0)


def test_cache_key_ignores_epsilon():
    assert model_cache_key(build_model("ou", epsilon=0.1)) == model_cache_key(build_model("ou", epsilon=0.2))
    assert model_cache_key(build_model("ou")) != model_cache_key(build_model("ou", {"kappa": 2.0}))


def test_store_round_trip(tmp_path, session_factory, monkeypatch):
    model = build_model("ou")
    grid = fast_grid(model.domain, 129)
    store = CellStore(tmp_path, session_factory)
    first = CellTable(model, grid, ANALYTIC_OU, store=store, workers=1)
    solved = first.solve([0.5], 0.0)

    assert len(list(tmp_path.glob("*.npz"))) == 1
    assert len(list(tmp_path.glob("*.csv"))) == 1
    with session_factory() as session:
        entries = session.scalars(select(CellCacheEntry)).all()
    assert len(entries) == 1
    assert entries[0].backend == ANALYTIC_OU

    monkeypatch.setattr("cells.table.solve_cell", lambda *a, **k: pytest.fail("expected a cache hit"))
    second = CellTable(model, grid, ANALYTIC_OU, store=store, workers=1)
    loaded = second.solve([0.5], 0.0)
    assert np.array_equal(loaded.rho, solved.rho)
    assert np.array_equal(loaded.phi, solved.phi)
    assert loaded.diagnostics == pytest.approx(solved.diagnostics)


def test_generator_on_polynomials():
    # OU fast drift c = -y, alpha = 2: L0 y = -y and L0 y^2 = 2 - 2y^2
    model = build_model("ou")
    grid = fast_grid(model.domain, 129)
    y = grid.points[:, 0]
    out = apply_L0(model.coeffs, [0.0], 0.0, np.column_stack([y, y**2]), grid)
    inner = slice(1, -1)
    assert out[inner, 0] == pytest.approx(-y[inner], abs=1e-8)
    assert out[inner, 1] == pytest.approx(2.0 - 2.0 * y[inner] ** 2, abs=1e-6)


def test_numeric_density_has_unit_mass():
    model = build_model("double_well")
    grid = fast_grid(model.domain, 129)
    rho = solve_pseudo_stationary(model.coeffs, [0.0], 0.0, grid)
    assert np.all(rho >= 0.0)
    assert grid.integrate(rho) == pytest.approx(1.0, abs=1e-10)


def _double_well_error(nodes):
    model = build_model("double_well")
    grid = fast_grid(model.domain, nodes)
    y = grid.points[:, 0]
    exact = np.exp(-(y**4 / 4.0 - y**2 / 2.0))
    exact /= grid.integrate(exact)
    rho = solve_pseudo_stationary(model.coeffs, [0.0], 0.0, grid)
    return float(np.max(np.abs(rho - exact))), float(exact.max())


def test_double_well_density_matches_closed_form():
    error, peak = _double_well_error(257)
    assert error < 1e-3 * peak


def test_numeric_density_converges_at_second_order():
    # the OU density is reproduced exactly by the scheme, so refine on the double well
    coarse, _ = _double_well_error(129)
    fine, _ = _double_well_error(257)
    assert 3.0 < coarse / fine < 5.0
