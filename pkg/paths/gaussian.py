"""Exact Gaussian laws of linear SDEs: moment ODEs and log densities."""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from errors import InvalidDensityError, UnsupportedModelError
from model.coefficients import GaussianInit, LinearSDE, MultiscaleModel

logger = logging.getLogger(__name__)

RK4_STEP = 1e-4


@dataclass(frozen=True)
class GaussianState:
    t: float
    mean: np.ndarray
    cov: np.ndarray

    def log_density(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z) - self.mean
        sign, logdet = np.linalg.slogdet(2.0 * np.pi * self.cov)
        if sign <= 0 or not np.isfinite(logdet):
            raise InvalidDensityError(f"Gaussian law at t={self.t:g} is degenerate; no density")
        return -0.5 * logdet - 0.5 * np.einsum("ni,ij,nj->n", z, np.linalg.inv(self.cov), z)

    def marginal(self, index: slice) -> "GaussianState":
        return GaussianState(self.t, self.mean[index].copy(), self.cov[index, index].copy())


def as_linear_sde(model) -> LinearSDE:
    if isinstance(model, LinearSDE):
        return model
    if isinstance(model, MultiscaleModel):
        return model.linear_sde()
    if hasattr(model, "reduced_linear"):
        return model.reduced_linear()
    raise UnsupportedModelError(f"no linear form for {type(model).__name__}")


def _rhs(sde: LinearSDE, t: float, mean: np.ndarray, cov: np.ndarray):
    K = sde.K
    return K @ mean + sde.k(t), K @ cov + cov @ K.T + sde.Q


def evolve_gaussian_moments(model, t0: float, t1: float, state: GaussianState, step: float = RK4_STEP) -> GaussianState:
    """RK4 on m' = Km + k(t), S' = KS + SK' + Q from t0 to t1."""
    sde = as_linear_sde(model)
    mean = np.asarray(state.mean, float).copy()
    cov = np.asarray(state.cov, float).copy()
    span = float(t1) - float(t0)
    if span < 0:
        raise ValueError("moments evolve forward in time only")
    n_steps = int(np.ceil(span / step - 1e-9)) if span > 0 else 0
    h = span / n_steps if n_steps else 0.0
    t = float(t0)
    for _ in range(n_steps):
        k1m, k1s = _rhs(sde, t, mean, cov)
        k2m, k2s = _rhs(sde, t + 0.5 * h, mean + 0.5 * h * k1m, cov + 0.5 * h * k1s)
        k3m, k3s = _rhs(sde, t + 0.5 * h, mean + 0.5 * h * k2m, cov + 0.5 * h * k2s)
        k4m, k4s = _rhs(sde, t + h, mean + h * k3m, cov + h * k3s)
        mean = mean + (h / 6.0) * (k1m + 2 * k2m + 2 * k3m + k4m)
        cov = cov + (h / 6.0) * (k1s + 2 * k2s + 2 * k3s + k4s)
        t += h
    cov = 0.5 * (cov + cov.T)
    return GaussianState(float(t1), mean, cov)


class GaussianPath:
    """Law of a linear SDE started at ``t_start``; states cached by time.

    ``index`` selects a marginal block, e.g. the slow coordinates.
    """

    def __init__(self, model, init: GaussianInit, t_start: float, index: Optional[slice] = None, step: float = RK4_STEP):
        self.sde = as_linear_sde(model)
        self.index = index
        self.step = step
        self._lock = threading.Lock()
        self._states: Dict[float, GaussianState] = {
            round(float(t_start), 12): GaussianState(float(t_start), np.asarray(init.mean, float), np.asarray(init.cov, float))
        }

    def state(self, t: float) -> GaussianState:
        key = round(float(t), 12)
        with self._lock:
            if key not in self._states:
                earlier = [s for s in self._states if s <= key]
                if not earlier:
                    raise ValueError(f"t={t:g} precedes the start of the Gaussian path")
                base = self._states[max(earlier)]
                self._states[key] = evolve_gaussian_moments(self.sde, base.t, float(t), base, self.step)
            return self._states[key]

    def log_density(self, z: np.ndarray, t: float) -> np.ndarray:
        s = self.state(t)
        if self.index is not None:
            s = s.marginal(self.index)
        return s.log_density(z)


def stationary_state(model: MultiscaleModel, t: float = 0.0) -> GaussianState:
    """Stationary law of a time-independent linear model."""
    sde = as_linear_sde(model)
    mean = -np.linalg.solve(sde.K, sde.k(t))
    cov = solve_continuous_lyapunov(sde.K, -sde.Q)
    return GaussianState(float(t), mean, 0.5 * (cov + cov.T))
