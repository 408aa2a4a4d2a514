"""Limit functionals on the extended (X, F) / (X, H) systems and their splits.

Each total integrates the functional row of bar-A^{1/2}; the regular part is the
Girsanov functional of the averaged process against its averaged comparable,
and the anomalous part is read as total − regular.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from averaging.extended import ExtendedSystem
from averaging.reduced import AveragedModel
from errors import DivergentFunctionalError, SingularDiffusionError
from functionals.densities import ReducedDensity
from functionals.spec import (
    LIMIT_ANOMALOUS,
    LIMIT_REGULAR,
    LIMIT_TOTAL,
    FunctionalSpec,
    IntegrandBundle,
    difference,
)
from model import fd
from model.assembly import RCOND_MIN, rcond
from model.comparable import BACKWARD, FORWARD
from paths.state import StepState

FORWARD_NAMES = ("F", "F1", "F2")
BACKWARD_NAMES = ("G", "G1", "G2", "H")


def _solve_A(state: StepState, vec: np.ndarray) -> np.ndarray:
    A = state.A
    rc = rcond(A)
    if np.any(rc < RCOND_MIN):
        i = int(np.argmax(rc < RCOND_MIN))
        raise SingularDiffusionError("averaged diffusion A is numerically singular", point=(state.x[i].tolist(), state.t), rcond=float(rc[i]))
    return np.linalg.solve(A, vec[..., None])[..., 0]


def _total_bundle(extended: ExtendedSystem, boundary=None) -> IntegrandBundle:
    m = extended.m

    def dw(state: StepState) -> np.ndarray:
        return state.root[:, m, :]

    def dt(state: StepState) -> np.ndarray:
        return extended.bar_w(state.x, state.t)

    return IntegrandBundle(dw=dw, dt=dt, boundary=boundary)


def _slow_loading(sol: np.ndarray, state: StepState, m: int) -> np.ndarray:
    return np.einsum("ni,nip->np", sol, state.root[:, :m, :])


def limit_forward_decomposition(extended: ExtendedSystem, avg: AveragedModel, names: Sequence[str] = FORWARD_NAMES, gated: bool = True):
    """Specs F (total), F1 (regular) and F2 = F − F1 (anomalous)."""
    if extended.kind != FORWARD or avg.kind != FORWARD:
        raise DivergentFunctionalError("forward decomposition needs the forward extended system and averaged model")
    m = extended.m
    comparable = extended.comparable
    total_name, regular_name, anomalous_name = names

    def parts(state: StepState):
        def compute():
            diff = state.w - avg.w_comp(state.x, state.t)
            return diff, _solve_A(state, diff)

        return state.memo(f"limit-forward:{id(avg)}", compute)

    def dw(state: StepState) -> np.ndarray:
        _, sol = parts(state)
        return _slow_loading(sol, state, m)

    def dt(state: StepState) -> np.ndarray:
        diff, sol = parts(state)
        return 0.5 * np.sum(diff * sol, axis=1)

    total = FunctionalSpec(total_name, FORWARD, LIMIT_TOTAL, comparable, _total_bundle(extended), gated=gated)
    regular = FunctionalSpec(regular_name, FORWARD, LIMIT_REGULAR, comparable, IntegrandBundle(dw=dw, dt=dt), gated=gated)
    return [total, regular, difference(anomalous_name, total, regular, LIMIT_ANOMALOUS, gated=gated)]


def limit_backward_decomposition(
    extended: ExtendedSystem,
    avg: AveragedModel,
    density: ReducedDensity,
    names: Sequence[str] = BACKWARD_NAMES,
    gated: bool = True,
):
    """Specs G, G1, G2 = G − G1 and H.

    G = H + log p(X₀, 0) − log p(X_t, t) is reported but never gated. G1 carries
    the same boundary, so G2 has none.
    """
    if extended.kind != BACKWARD or avg.kind != BACKWARD:
        raise DivergentFunctionalError("backward decomposition needs the backward extended system and averaged model")
    m = extended.m
    comparable = extended.comparable
    total_name, regular_name, anomalous_name, h_name = names
    h = float(np.min(avg.xt.step))
    flags = tuple(density.flags)

    def boundary(x0, y0, x, y, t):
        return density.log_p(x0, 0.0) - density.log_p(x, t)

    def drift_potential(t):
        return lambda xx: avg.w_comp(xx, t) - 0.5 * avg.div_A(xx, t, h)

    def parts(state: StepState):
        def compute():
            q = state.w + avg.w_comp(state.x, state.t) - avg.div_A(state.x, state.t, h)
            return q, _solve_A(state, q)

        return state.memo(f"limit-backward:{id(avg)}", compute)

    def dw(state: StepState) -> np.ndarray:
        _, sol = parts(state)
        return _slow_loading(sol, state, m)

    def dt(state: StepState) -> np.ndarray:
        q, sol = parts(state)
        return 0.5 * np.sum(q * sol, axis=1) + fd.div(drift_potential(state.t), state.x, h)

    h_spec = FunctionalSpec(h_name, BACKWARD, LIMIT_TOTAL, comparable, _total_bundle(extended), gated=False)
    total = FunctionalSpec(total_name, BACKWARD, LIMIT_TOTAL, comparable, _total_bundle(extended, boundary), gated=False, flags=flags)
    regular = FunctionalSpec(
        regular_name, BACKWARD, LIMIT_REGULAR, comparable, IntegrandBundle(dw=dw, dt=dt, boundary=boundary), gated=gated, flags=flags
    )
    anomalous = difference(anomalous_name, total, regular, LIMIT_ANOMALOUS, gated=gated)
    return [total, regular, anomalous, h_spec]
