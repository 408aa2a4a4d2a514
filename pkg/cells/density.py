"""Pointwise evaluation of log ρ(x, y, t) away from the cell grid.

Path integrands need log ρ and its derivatives at the simulated (x, y, t). The
Gaussian provider is exact for affine models; the tabulated provider splines a
table of numeric cell solutions over the slow nodes.
"""
from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
from scipy.interpolate import RectBivariateSpline, RegularGridInterpolator
from scipy.linalg import solve_continuous_lyapunov

from errors import UnsupportedModelError
from model import fd
from model.coefficients import CoefficientSet, as_batch

logger = logging.getLogger(__name__)


class FastDensity:
    """log ρ at batches of points; derivatives by central differences."""

    step = fd.DEFAULT_STEP

    def log_rho(self, x, y, t: float) -> np.ndarray:
        raise NotImplementedError

    def rho(self, x, y, t: float) -> np.ndarray:
        return np.exp(self.log_rho(x, y, t))

    def grad_x_log_rho(self, x, y, t: float) -> np.ndarray:
        return fd.grad_x(self.log_rho, as_batch(x, self.m), as_batch(y, self.n), t, self.step)

    def grad_y_log_rho(self, x, y, t: float) -> np.ndarray:
        return fd.grad_y(self.log_rho, as_batch(x, self.m), as_batch(y, self.n), t, self.step)

    def dt_log_rho(self, x, y, t: float) -> np.ndarray:
        return fd.d_dt(self.log_rho, as_batch(x, self.m), as_batch(y, self.n), t, self.step)

    def grad_log_rho(self, x, y, t: float) -> np.ndarray:
        """Joint gradient over (x, y), shape (P, m + n)."""
        return np.concatenate([self.grad_x_log_rho(x, y, t), self.grad_y_log_rho(x, y, t)], axis=1)

    def hessian_log_rho(self, x, y, t: float) -> np.ndarray:
        """Joint Hessian over (x, y), shape (P, m + n, m + n)."""
        x, y = as_batch(x, self.m), as_batch(y, self.n)
        cols = [fd.grad_x(self.grad_log_rho, x, y, t, fd.NESTED_STEP), fd.grad_y(self.grad_log_rho, x, y, t, fd.NESTED_STEP)]
        hess = np.concatenate(cols, axis=-1)
        return 0.5 * (hess + np.swapaxes(hess, 1, 2))


class GaussianFastDensity(FastDensity):
    """Frozen fast law N(−C⁻¹(cₓx + c₀(t)), S) of an affine model."""

    def __init__(self, coeffs: CoefficientSet):
        form = coeffs.affine
        if form is None:
            raise UnsupportedModelError("Gaussian fast density needs an affine model")
        self.m, self.n = coeffs.m, coeffs.n
        self._form = form
        self._C = np.asarray(form.cy, float)
        cov = solve_continuous_lyapunov(self._C, -(form.eta @ form.eta.T))
        self.cov = 0.5 * (cov + cov.T)
        self._cov_inv = np.linalg.inv(self.cov)
        _, logdet = np.linalg.slogdet(2.0 * np.pi * self.cov)
        self._norm = -0.5 * logdet

    def mean(self, x, t: float) -> np.ndarray:
        x = as_batch(x, self.m)
        c_eff = x @ self._form.cx.T + self._form.offsets(t)[3]
        return -np.linalg.solve(self._C, c_eff.T).T

    def log_rho(self, x, y, t: float) -> np.ndarray:
        z = as_batch(y, self.n) - self.mean(x, t)
        return self._norm - 0.5 * np.einsum("ni,ij,nj->n", z, self._cov_inv, z)

    def grad_y_log_rho(self, x, y, t: float) -> np.ndarray:
        z = as_batch(y, self.n) - self.mean(x, t)
        return -z @ self._cov_inv

    def grad_x_log_rho(self, x, y, t: float) -> np.ndarray:
        z = as_batch(y, self.n) - self.mean(x, t)
        dmean_dx = -np.linalg.solve(self._C, self._form.cx)
        return (z @ self._cov_inv) @ dmean_dx

    def dt_log_rho(self, x, y, t: float) -> np.ndarray:
        z = as_batch(y, self.n) - self.mean(x, t)
        c0_dot = (self._form.offsets(t + self.step)[3] - self._form.offsets(t - self.step)[3]) / (2.0 * self.step)
        dmean_dt = -np.linalg.solve(self._C, c0_dot)
        return (z @ self._cov_inv) @ dmean_dt

    def hessian_log_rho(self, x, y, t: float) -> np.ndarray:
        # log ρ is quadratic in (y − mean(x)), so the Hessian is constant
        dmean_dx = -np.linalg.solve(self._C, self._form.cx)
        M = np.hstack([-dmean_dx, np.eye(self.n)])
        hess = -M.T @ self._cov_inv @ M
        return np.broadcast_to(hess, (as_batch(x, self.m).shape[0],) + hess.shape)


class TabulatedFastDensity(FastDensity):
    """Splines of log ρ over (x, y) at each tabulated t, blended linearly in t.

    One slow variable only; y is clamped to the fast box.
    """

    def __init__(self, cells: Sequence, x_nodes: Sequence[float], t_nodes: Sequence[float]):
        first = cells[0]
        grid = first.grid
        if np.ravel(first.x).shape[0] != 1:
            raise UnsupportedModelError("tabulated fast density supports one slow variable")
        if grid.n > 2:
            raise UnsupportedModelError("tabulated fast density supports at most two fast variables")
        self.m, self.n = 1, grid.n
        self._grid = grid
        self._x = np.asarray(x_nodes, float)
        self._t = np.asarray(t_nodes, float)
        by_key = {(round(float(np.ravel(c.x)[0]), 12), round(float(c.t), 12)): c for c in cells}
        self._splines = []
        for t in self._t:
            table = np.stack([by_key[(round(float(x), 12), round(float(t), 12))].log_rho for x in self._x])
            if grid.n == 1:
                self._splines.append(RectBivariateSpline(self._x, grid.axes[0], table, kx=3, ky=3))
            else:
                values = table.reshape((self._x.shape[0],) + grid.shape)
                self._splines.append(
                    RegularGridInterpolator((self._x, *grid.axes), values, method="cubic", bounds_error=False, fill_value=None)
                )
        logger.debug("Tabulated fast density over %s x-nodes and %s t-nodes", self._x.size, self._t.size)

    def _at(self, k: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        spline = self._splines[k]
        if self.n == 1:
            return spline.ev(x[:, 0], y[:, 0])
        return spline(np.column_stack([x[:, 0], y]))

    def log_rho(self, x, y, t: float) -> np.ndarray:
        x = np.clip(as_batch(x, 1), self._x[0], self._x[-1])
        y = np.clip(as_batch(y, self.n), self._grid.lo, self._grid.hi)
        if self._t.size == 1:
            return self._at(0, x, y)
        t = float(np.clip(t, self._t[0], self._t[-1]))
        k = int(min(np.searchsorted(self._t, t, side="right") - 1, self._t.size - 2))
        theta = (t - self._t[k]) / (self._t[k + 1] - self._t[k])
        return (1.0 - theta) * self._at(k, x, y) + theta * self._at(k + 1, x, y)
