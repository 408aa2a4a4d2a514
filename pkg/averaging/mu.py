"""Pseudo-stationary density μ(x, t) of the reduced process at frozen t."""
from __future__ import annotations

import logging
from typing import List, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_continuous_lyapunov

from cells.grid import FastGrid
from cells.solver import stationary_density
from errors import CellSolverError, UnsupportedModelError
from model.coefficients import as_batch

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
GAUSSIAN = "gaussian"
SLOW_NODES = 257


def slow_grid_for(avg, nodes: int = SLOW_NODES) -> FastGrid:
    return FastGrid(avg.xt.x_lo, avg.xt.x_hi, nodes=nodes)


def _gaussian_moments(avg, t: float):
    lin = avg.reduced_linear()
    if np.max(np.linalg.eigvals(lin.K).real) >= 0:
        raise CellSolverError("reduced drift is not stable; no stationary density", point=([], t))
    mean = -np.linalg.solve(lin.K, lin.k(t))
    cov = solve_continuous_lyapunov(lin.K, -lin.Q)
    return mean, 0.5 * (cov + cov.T)


def solve_mu(avg, t: float, slow_grid: Optional[FastGrid] = None, backend: Optional[str] = None) -> np.ndarray:
    """μ(·, t) on ``slow_grid`` nodes, unit mass under the trapezoid rule."""
    slow_grid = slow_grid or slow_grid_for(avg)
    backend = backend or (NUMERIC if avg.m == 1 else GAUSSIAN)
    if backend == NUMERIC:
        if avg.m != 1:
            raise UnsupportedModelError("numeric reduced density supports one slow variable; use the Gaussian backend")
        A = avg.A(slow_grid.points, t)
        if float(np.min(A)) <= 0:
            raise CellSolverError("reduced diffusion A is not elliptic", point=([], t))
        return stationary_density(lambda pts: avg.w(pts, t), lambda pts: avg.A(pts, t), slow_grid, point=([], t))
    mean, cov = _gaussian_moments(avg, t)
    z = slow_grid.points - mean
    log_mu = -0.5 * np.einsum("ni,ij,nj->n", z, np.linalg.inv(cov), z)
    mu = np.exp(log_mu - log_mu.max())
    return mu / slow_grid.integrate(mu)


class MuField:
    """log μ and ∇ log μ at arbitrary (x, t), linear in t between xt nodes."""

    def __init__(self, avg, slow_grid: Optional[FastGrid] = None, backend: Optional[str] = None):
        self.xt = avg.xt
        self.m = avg.m
        self.backend = backend or (NUMERIC if avg.m == 1 else GAUSSIAN)
        self._splines: List[CubicSpline] = []
        self._moments = []
        self.slow_grid = slow_grid or slow_grid_for(avg)
        for t in self.xt.t_axis:
            if self.backend == NUMERIC:
                mu = solve_mu(avg, float(t), self.slow_grid, NUMERIC)
                self._splines.append(CubicSpline(self.slow_grid.axes[0], np.log(mu), extrapolate=True))
            else:
                mean, cov = _gaussian_moments(avg, float(t))
                self._moments.append((mean, np.linalg.inv(cov), -0.5 * np.linalg.slogdet(2 * np.pi * cov)[1]))
        logger.debug("Reduced density solved at %s t-nodes (%s)", self.xt.t_axis.size, self.backend)

    def _at(self, k: int, x: np.ndarray, deriv: int) -> np.ndarray:
        if self.backend == NUMERIC:
            xc = np.clip(x[:, 0], self.slow_grid.lo[0], self.slow_grid.hi[0])
            out = self._splines[k](xc, deriv)
            return out if deriv == 0 else out[:, None]
        mean, prec, norm = self._moments[k]
        z = x - mean
        if deriv == 0:
            return norm - 0.5 * np.einsum("ni,ij,nj->n", z, prec, z)
        return -z @ prec

    def _blend(self, x, t: float, deriv: int) -> np.ndarray:
        x = as_batch(x, self.m)
        lo, hi, theta = self.xt.locate_t(t)
        out = self._at(lo, x, deriv)
        if theta > 0.0:
            out = (1.0 - theta) * out + theta * self._at(hi, x, deriv)
        return out

    def log_mu(self, x, t: float) -> np.ndarray:
        return self._blend(x, t, 0)

    def grad_log_mu(self, x, t: float) -> np.ndarray:
        return self._blend(x, t, 1)
