"""Closed-form cell problems for linear fast drift and constant α.

With c = C(y − m) the frozen fast law is N(m, S), CS + SC' + α = 0. Poisson
right-hand sides that are polynomials of degree ≤ 2 in z = y − m have
quadratic solutions φ = z'Qz + k'z + q₀ with C'Q + QC = −R and C'k = −r.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Tuple

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from cells.grid import FastGrid
from errors import CellSolverError, UnsupportedModelError
from model.coefficients import CoefficientSet

FIT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class GaussianCell:
    mean: np.ndarray
    cov: np.ndarray
    C: np.ndarray
    alpha: np.ndarray

    def log_density(self, y: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(y) - self.mean
        sol = np.linalg.solve(self.cov, z.T).T
        _, logdet = np.linalg.slogdet(2.0 * np.pi * self.cov)
        return -0.5 * np.sum(z * sol, axis=1) - 0.5 * logdet

    def grad_log_density(self, y: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(y) - self.mean
        return -np.linalg.solve(self.cov, z.T).T


def gaussian_cell(coeffs: CoefficientSet, x, t: float) -> GaussianCell:
    form = coeffs.affine
    if form is None:
        raise UnsupportedModelError("analytic_ou backend needs an affine model; use numeric_fd")
    C = np.asarray(form.cy, float)
    if np.max(np.linalg.eigvals(C).real) >= 0:
        raise CellSolverError("fast drift matrix is not stable; no pseudo-stationary density", point=(list(np.ravel(x)), t))
    alpha = form.eta @ form.eta.T
    c_eff = form.cx @ np.ravel(np.asarray(x, float)) + form.offsets(t)[3]
    mean = -np.linalg.solve(C, c_eff)
    cov = solve_continuous_lyapunov(C, -alpha)
    return GaussianCell(mean=mean, cov=0.5 * (cov + cov.T), C=C, alpha=alpha)


def rho_on_grid(cell: GaussianCell, grid: FastGrid) -> np.ndarray:
    rho = np.exp(cell.log_density(grid.points))
    return rho / grid.integrate(rho)


def _design(z: np.ndarray) -> Tuple[np.ndarray, list]:
    n = z.shape[1]
    pairs = list(combinations_with_replacement(range(n), 2))
    cols = [np.ones(z.shape[0])] + [z[:, k] for k in range(n)] + [z[:, k] * z[:, l] for k, l in pairs]
    return np.stack(cols, axis=1), pairs


def solve_poisson_polynomial(cell: GaussianCell, grid: FastGrid, rhs: np.ndarray) -> np.ndarray:
    """−L₀φ = rhs for rhs quadratic in y; returns φ on the grid, same shape as rhs."""
    rhs = np.asarray(rhs, float)
    squeeze = rhs.ndim == 1
    cols = rhs[:, None] if squeeze else rhs
    z = grid.points - cell.mean
    design, pairs = _design(z)
    coef, *_ = np.linalg.lstsq(design, cols, rcond=None)
    misfit = np.max(np.abs(design @ coef - cols)) if cols.size else 0.0
    scale = max(1.0, float(np.max(np.abs(cols))) if cols.size else 1.0)
    if misfit > FIT_TOL * scale:
        raise UnsupportedModelError(
            f"Poisson right-hand side is not a polynomial of degree <= 2 in y (misfit {misfit:.2e}); use numeric_fd"
        )
    n = grid.n
    C = cell.C
    out = np.empty_like(cols)
    for j in range(cols.shape[1]):
        beta = coef[:, j]
        r = beta[1 : n + 1]
        R = np.zeros((n, n))
        for (k, l), value in zip(pairs, beta[n + 1 :]):
            if k == l:
                R[k, k] = value
            else:
                R[k, l] = R[l, k] = 0.5 * value
        Q = solve_continuous_lyapunov(C.T, -R)
        Q = 0.5 * (Q + Q.T)
        k_vec = -np.linalg.solve(C.T, r)
        q0 = -np.trace(Q @ cell.cov)
        out[:, j] = np.einsum("ni,ij,nj->n", z, Q, z) + z @ k_vec + q0
    return out[:, 0] if squeeze else out
