"""Frozen-(x, t) cell problems: ρ from L₀*ρ = 0 and φ from −L₀φ = rhs.

Both solves use bordered systems: [[M, 1], [w', 0]] for the unit-mass density
and [[−L₀, 1], [(wρ)', 0]] for the ρ-centered Poisson solution, where w are the
trapezoid weights. The multiplier of the second system is the discrete
solvability defect and is recorded, not thrown.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, norm as sparse_norm, onenormest, splu

from cells import analytic
from cells.grid import FastGrid
from cells.operators import fokker_planck_matrix, generator_matrix
from errors import CellSolverError, CenteringError, UnsupportedModelError
from model.coefficients import CoefficientSet

logger = logging.getLogger(__name__)

NUMERIC_FD = "numeric_fd"
ANALYTIC_OU = "analytic_ou"
BACKENDS = (NUMERIC_FD, ANALYTIC_OU)

RESIDUAL_TOL = 1e-8
CENTERING_TOL = 1e-8
NEGATIVE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CellSolution:
    """Grid functions of one cell; ``phi`` and ``phi_tilde`` carry m columns."""

    x: np.ndarray
    t: float
    grid: FastGrid
    rho: np.ndarray
    phi: np.ndarray
    backend: str
    phi_tilde: Optional[np.ndarray] = None
    phi_m1: Optional[np.ndarray] = None
    diagnostics: Dict[str, float] = field(default_factory=dict)

    @property
    def log_rho(self) -> np.ndarray:
        return np.log(self.rho)

    def grad_log_rho(self) -> np.ndarray:
        return self.grid.gradient(self.log_rho)

    def mass(self) -> float:
        return float(self.grid.integrate(self.rho))

    def centering(self, column: np.ndarray) -> np.ndarray:
        col = np.asarray(column, float)
        weight = self.rho if col.ndim == 1 else self.rho[:, None]
        return self.grid.integrate(col * weight)

    def with_columns(self, **columns) -> "CellSolution":
        diag = dict(self.diagnostics)
        diag.update(columns.pop("diagnostics", {}))
        return replace(self, diagnostics=diag, **columns)


def _frozen_x(coeffs: CoefficientSet, x, size: int) -> np.ndarray:
    return np.broadcast_to(np.ravel(np.asarray(x, float)), (size, coeffs.m))


def _point(x, t):
    return (np.ravel(np.asarray(x, float)).tolist(), float(t))


def _check_elliptic(alpha_nodes: np.ndarray, x, t) -> None:
    eig_min = float(np.min(np.linalg.eigvalsh(0.5 * (alpha_nodes + np.swapaxes(alpha_nodes, 1, 2)))))
    if not eig_min > 0:
        raise CellSolverError(f"fast diffusion alpha is not elliptic (min eigenvalue {eig_min:.3e})", point=_point(x, t))


def _condition_estimate(matrix: sp.spmatrix, lu) -> float:
    n = matrix.shape[0]
    inv = LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda v: lu.solve(v, trans="T"), dtype=float)
    try:
        return float(sparse_norm(matrix, 1) * onenormest(inv))
    except Exception:  # noqa: BLE001 - estimate only
        return float("nan")


def _factor(matrix: sp.spmatrix, what: str, x, t):
    try:
        return splu(sp.csc_matrix(matrix))
    except RuntimeError as exc:
        raise CellSolverError(f"{what}: discrete system is singular ({exc})", point=_point(x, t)) from None


def _bordered(block: sp.spmatrix, row: np.ndarray) -> sp.csc_matrix:
    size = block.shape[0]
    ones = sp.csr_matrix(np.ones((size, 1)))
    return sp.csc_matrix(sp.bmat([[block, ones], [sp.csr_matrix(row[None, :]), None]]))


def stationary_density(
    drift: Callable[[np.ndarray], np.ndarray],
    diffusion: Callable[[np.ndarray], np.ndarray],
    grid: FastGrid,
    point=None,
) -> np.ndarray:
    """Unit-mass nodal density with L*ρ = 0 and zero flux through the box boundary.

    ``drift`` maps grid points (P, n) to (P, n) and ``diffusion`` to (P, n, n).
    """
    M = fokker_planck_matrix(drift, diffusion, grid)
    system = _bordered(M, grid.weights)
    lu = _factor(system, "stationary density", *(point or (None, None)))
    rhs = np.zeros(grid.size + 1)
    rhs[-1] = 1.0
    sol = lu.solve(rhs)
    rho = sol[: grid.size]
    if not np.all(np.isfinite(rho)):
        raise CellSolverError(
            "stationary density solve produced non-finite values",
            condition=_condition_estimate(system, lu),
            point=point,
        )
    top = float(np.max(np.abs(rho)))
    residual = float(np.max(np.abs(M @ rho))) / top
    if residual > RESIDUAL_TOL:
        raise CellSolverError(
            f"stationary density residual {residual:.3e} above tolerance",
            condition=_condition_estimate(system, lu),
            point=point,
        )
    low = float(rho.min())
    if low < -NEGATIVE_TOL * top:
        raise CellSolverError(
            f"stationary density is indefinite (min {low:.3e})",
            condition=_condition_estimate(system, lu),
            point=point,
        )
    floored = int(np.count_nonzero(rho <= 0))
    if floored:
        logger.debug("Flooring %s nonpositive tail nodes of the stationary density", floored)
        rho = np.where(rho > 0, rho, np.finfo(float).tiny)
    return rho / grid.integrate(rho)


def apply_L0(coeffs: CoefficientSet, x, t: float, u: np.ndarray, grid: FastGrid) -> np.ndarray:
    """Central-difference L₀u on the grid; ``u`` is (N,) or (N, k)."""
    v = coeffs.evaluate(_frozen_x(coeffs, x, grid.size), grid.points, t)
    return generator_matrix(v.c, v.alpha, grid) @ np.asarray(u, float)


def solve_pseudo_stationary(coeffs: CoefficientSet, x, t: float, grid: FastGrid, backend: str = NUMERIC_FD) -> np.ndarray:
    if backend == ANALYTIC_OU:
        return analytic.rho_on_grid(analytic.gaussian_cell(coeffs, x, t), grid)
    if backend != NUMERIC_FD:
        raise CellSolverError(f"unknown cell backend {backend!r}")
    if grid.n > 2:
        raise UnsupportedModelError(f"numeric_fd handles n <= 2 fast variables, got n={grid.n}; use analytic_ou")
    xb = _frozen_x(coeffs, x, grid.size)
    v = coeffs.evaluate(xb, grid.points, t)
    _check_elliptic(v.alpha, x, t)

    def drift(pts):
        return coeffs.evaluate(_frozen_x(coeffs, x, pts.shape[0]), pts, t).c

    def diffusion(pts):
        return coeffs.evaluate(_frozen_x(coeffs, x, pts.shape[0]), pts, t).alpha

    return stationary_density(drift, diffusion, grid, point=_point(x, t))


def solve_poisson(
    coeffs: CoefficientSet,
    x,
    t: float,
    rho: np.ndarray,
    rhs: np.ndarray,
    grid: FastGrid,
    backend: str = NUMERIC_FD,
    centering_tol: float = CENTERING_TOL,
    diagnostics: Optional[Dict[str, float]] = None,
) -> np.ndarray:
    """ρ-centered solution of −L₀φ = rhs for each column of ``rhs``."""
    rhs = np.asarray(rhs, float)
    squeeze = rhs.ndim == 1
    cols = rhs[:, None] if squeeze else rhs
    scale = max(1.0, float(np.max(np.abs(cols))) if cols.size else 1.0)
    defect = grid.integrate(cols * np.asarray(rho, float)[:, None])
    worst = int(np.argmax(np.abs(defect))) if defect.size else 0
    if defect.size and abs(defect[worst]) > centering_tol * scale:
        raise CenteringError("Poisson right-hand side is not centered", float(defect[worst]), point=_point(x, t))
    if not np.any(cols):
        out = np.zeros_like(cols)
        return out[:, 0] if squeeze else out

    if backend == ANALYTIC_OU:
        out = analytic.solve_poisson_polynomial(analytic.gaussian_cell(coeffs, x, t), grid, cols)
        return out[:, 0] if squeeze else out
    if backend != NUMERIC_FD:
        raise CellSolverError(f"unknown cell backend {backend!r}")

    v = coeffs.evaluate(_frozen_x(coeffs, x, grid.size), grid.points, t)
    L = generator_matrix(v.c, v.alpha, grid)
    system = _bordered(-L, grid.weights * rho)
    lu = _factor(system, "Poisson", x, t)
    out = np.empty_like(cols)
    multipliers = []
    for j in range(cols.shape[1]):
        sol = lu.solve(np.concatenate([cols[:, j], [0.0]]))
        phi, lam = sol[: grid.size], sol[grid.size]
        residual = float(np.max(np.abs(-(L @ phi) + lam - cols[:, j])))
        if not np.isfinite(residual) or residual > RESIDUAL_TOL * scale:
            raise CellSolverError(
                f"Poisson residual {residual:.3e} above tolerance",
                condition=_condition_estimate(system, lu),
                point=_point(x, t),
            )
        out[:, j] = phi
        multipliers.append(abs(lam))
    if diagnostics is not None:
        diagnostics["solvability_defect"] = max(diagnostics.get("solvability_defect", 0.0), max(multipliers))
    return out[:, 0] if squeeze else out


def solve_cell(
    coeffs: CoefficientSet,
    x,
    t: float,
    grid: FastGrid,
    backend: str = NUMERIC_FD,
    f_tilde=None,
) -> CellSolution:
    """ρ, φ for rhs f and, when ``f_tilde`` is given, φ̃ for rhs f̃."""
    x = np.ravel(np.asarray(x, float))
    diag: Dict[str, float] = {}
    rho = solve_pseudo_stationary(coeffs, x, t, grid, backend)
    diag["mass_defect"] = abs(float(grid.integrate(rho)) - 1.0)
    xb = _frozen_x(coeffs, x, grid.size)
    f = coeffs.evaluate(xb, grid.points, t).f
    diag["f_centering"] = float(np.max(np.abs(grid.integrate(f * rho[:, None]))))
    phi = solve_poisson(coeffs, x, t, rho, f, grid, backend, diagnostics=diag)
    phi_tilde = None
    if f_tilde is not None:
        ft = np.asarray(f_tilde(np.array(xb), grid.points, t), float).reshape(grid.size, coeffs.m)
        phi_tilde = solve_poisson(coeffs, x, t, rho, ft, grid, backend, diagnostics=diag)
    diag["phi_centering"] = float(np.max(np.abs(grid.integrate(phi * rho[:, None]))))
    return CellSolution(x=x, t=float(t), grid=grid, rho=rho, phi=phi, backend=backend, phi_tilde=phi_tilde, diagnostics=diag)
