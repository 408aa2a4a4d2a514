"""Boundary densities: p^ε of (X^ε, Y^ε) and p of the averaged X.

Exact Gaussian laws are used for linear models. One slow variable otherwise
gets a finite-volume solve of the averaged forward equation; beyond that a
kernel estimate from simulated limit paths. When p^ε has no exact form it is
replaced by the product p·ρ. Every approximation is flagged.
"""
from __future__ import annotations

import logging
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import splu
from scipy.stats import gaussian_kde

from cells.density import FastDensity
from cells.grid import FastGrid
from cells.operators import fokker_planck_matrix
from errors import DependencyError, UnsupportedModelError
from model.coefficients import MultiscaleModel, as_batch
from paths.gaussian import GaussianPath

logger = logging.getLogger(__name__)

GAUSSIAN = "gaussian"
FINITE_VOLUME = "finite_volume"
KDE = "kde"
PRODUCT = "product"
FV_NODES = 257
FV_STEP = 1e-3
TINY = np.finfo(float).tiny


class ReducedDensity:
    kind = ""
    flags: tuple = ()

    def log_p(self, x, t: float) -> np.ndarray:
        raise NotImplementedError


class GaussianReducedDensity(ReducedDensity):
    """Law of the averaged X from its affine reduced SDE, started at −burn_in."""

    kind = GAUSSIAN

    def __init__(self, avg, model: MultiscaleModel, burn_in: Optional[float] = None):
        burn_in = model.burn_in if burn_in is None else burn_in
        m = model.m
        self.m = m
        self._path = GaussianPath(avg.reduced_linear(), model.init.marginal(slice(0, m)), -burn_in)

    def log_p(self, x, t: float) -> np.ndarray:
        return self._path.log_density(as_batch(x, self.m), t)


class FiniteVolumeReducedDensity(ReducedDensity):
    """Implicit-Euler solve of ∂ₜp = −∂ₓ(wp) + ½∂ₓₓ(Ap) on a slow grid (m = 1)."""

    kind = FINITE_VOLUME
    flags = ("fv_reduced_density",)

    def __init__(self, avg, model: MultiscaleModel, burn_in: Optional[float] = None, nodes: int = FV_NODES, step: float = FV_STEP):
        if avg.m != 1:
            raise UnsupportedModelError("finite-volume reduced density supports one slow variable")
        burn_in = model.burn_in if burn_in is None else burn_in
        self.m = 1
        grid = FastGrid(avg.xt.x_lo, avg.xt.x_hi, nodes=nodes)
        self.grid = grid
        pts = grid.points
        init = model.init.marginal(slice(0, 1))
        var = max(float(init.cov[0, 0]), (2.0 * grid.spacing[0]) ** 2)
        p = np.exp(-0.5 * (pts[:, 0] - init.mean[0]) ** 2 / var)
        p /= grid.integrate(p)
        n_steps = max(1, int(np.ceil((model.T + burn_in) / step)))
        h = (model.T + burn_in) / n_steps
        eye = sp.identity(grid.size, format="csc")
        lu = None
        self._times = []
        self._logs = []
        t = -burn_in
        for k in range(n_steps + 1):
            if t >= -1e-12:
                self._times.append(t)
                self._logs.append(np.log(np.maximum(p, TINY)))
            if k == n_steps:
                break
            if lu is None or avg.xt.time_dependent:
                M = fokker_planck_matrix(lambda z, tt=t + h: avg.w(z, tt), lambda z, tt=t + h: avg.A(z, tt), grid)
                lu = splu((eye - h * M).tocsc())
            p = lu.solve(p)
            p = np.maximum(p, 0.0)
            p /= grid.integrate(p)
            t += h
        self._times = np.asarray(self._times)
        self._logs = np.asarray(self._logs)
        logger.warning("Reduced density p(x,t) from a finite-volume solve (%s steps); boundary terms are approximate", n_steps)

    def log_p(self, x, t: float) -> np.ndarray:
        x = as_batch(x, 1)[:, 0]
        times = self._times
        t = float(np.clip(t, times[0], times[-1]))
        k = int(min(np.searchsorted(times, t, side="right") - 1, times.size - 2)) if times.size > 1 else 0
        if times.size > 1:
            theta = (t - times[k]) / (times[k + 1] - times[k])
            row = (1.0 - theta) * self._logs[k] + theta * self._logs[k + 1]
        else:
            row = self._logs[0]
        axis = self.grid.axes[0]
        return CubicSpline(axis, row)(np.clip(x, axis[0], axis[-1]))


class KDEReducedDensity(ReducedDensity):
    """Gaussian kernel estimate from the X columns of a limit record."""

    kind = KDE
    flags = ("kde_reduced_density",)

    def __init__(self, record):
        self._record = record
        self._kdes: Dict[int, gaussian_kde] = {}
        logger.warning("Reduced density estimated by KDE from %s limit paths; boundary terms are approximate", record.n_paths)

    def log_p(self, x, t: float) -> np.ndarray:
        k = self._record.index_at(t)
        if k not in self._kdes:
            samples = self._record.x[self._record.kept(), k, :]
            self._kdes[k] = gaussian_kde(samples.T)
        x = as_batch(x, self._record.x.shape[2])
        return self._kdes[k].logpdf(x.T)


def reduced_density_for(avg, model: MultiscaleModel, record=None, burn_in: Optional[float] = None) -> ReducedDensity:
    try:
        return GaussianReducedDensity(avg, model, burn_in)
    except UnsupportedModelError as exc:
        logger.info("No Gaussian reduced density: %s", exc)
    if avg.m == 1:
        return FiniteVolumeReducedDensity(avg, model, burn_in)
    if record is None:
        raise DependencyError("reduced density for m > 1 nonlinear models needs simulated limit paths for a KDE")
    return KDEReducedDensity(record)


class JointDensity:
    kind = ""
    flags: tuple = ()

    def log_p(self, x, y, t: float) -> np.ndarray:
        raise NotImplementedError


class GaussianJointDensity(JointDensity):
    kind = GAUSSIAN

    def __init__(self, model: MultiscaleModel, burn_in: Optional[float] = None):
        burn_in = model.burn_in if burn_in is None else burn_in
        self.m, self.n = model.m, model.n
        self._path = GaussianPath(model, model.init, -burn_in)

    def log_p(self, x, y, t: float) -> np.ndarray:
        z = np.concatenate([as_batch(x, self.m), as_batch(y, self.n)], axis=1)
        return self._path.log_density(z, t)


class ProductDensity(JointDensity):
    """p^ε ≈ p(x, t)·ρ(x, y, t); accurate once the fast variable has relaxed."""

    kind = PRODUCT
    flags = ("product_density",)

    def __init__(self, reduced: ReducedDensity, fast: FastDensity):
        self.reduced = reduced
        self.fast = fast
        self.flags = ("product_density",) + tuple(reduced.flags)
        logger.warning("Joint density approximated by p(x,t)*rho(x,y,t); boundary terms of the finite-eps functionals are approximate")

    def log_p(self, x, y, t: float) -> np.ndarray:
        return self.reduced.log_p(x, t) + self.fast.log_rho(x, y, t)


def joint_density_for(model: MultiscaleModel, reduced: Optional[ReducedDensity] = None, fast: Optional[FastDensity] = None, burn_in: Optional[float] = None) -> JointDensity:
    if model.coeffs.affine is not None:
        return GaussianJointDensity(model, burn_in)
    if reduced is None or fast is None:
        raise DependencyError("nonlinear model: joint density needs the reduced density and the fast density")
    return ProductDensity(reduced, fast)


def density_gap(joint: JointDensity, reduced: ReducedDensity, fast: FastDensity, x, y, t: float) -> float:
    """sup |log p^ε − log(p·ρ)| over the given points."""
    gap = joint.log_p(x, y, t) - reduced.log_p(x, t) - fast.log_rho(x, y, t)
    return float(np.max(np.abs(gap)))
