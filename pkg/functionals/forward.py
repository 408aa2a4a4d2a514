"""Forward functional at finite ε against a comparable sharing f, c, σ, η.

With v = (b − b̂, g − ĝ) the scaled blocks cancel: (B − B̂)'D⁻¹Σ = v'D₁⁻¹Σ₁
and ½(B − B̂)'D⁻¹(B − B̂) = ½v'D₁⁻¹v, so the integrands carry no ε.
"""
from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from errors import ConfigurationError, DivergentFunctionalError
from functionals.spec import EPSILON_LEVEL, FunctionalSpec, IntegrandBundle
from model.assembly import assemble_batch, reduced_blocks, solve_reduced
from model.coefficients import CoefficientSet, MultiscaleModel
from model.comparable import FORWARD, ComparableSpec
from paths.state import StepState

logger = logging.getLogger(__name__)

FLIP_DT = "flip_dt"
MUTATIONS = (FLIP_DT,)
EPS_PAIR = (0.1, 0.01)
EPS_FREE_TOL = 1e-8


def sample_points(model: MultiscaleModel, count: int = 7):
    """A small deterministic set of (x, y) near the initial mean, inside the box."""
    m = model.m
    d = model.domain
    grid = np.linspace(-1.0, 1.0, count)[:, None]
    centre = model.init.mean
    x = np.clip(centre[:m] + 0.1 * grid * (d.x_hi - d.x_lo), d.x_lo, d.x_hi)
    y = np.clip(centre[m:] + 0.1 * grid[::-1] * (d.y_hi - d.y_lo), d.y_lo, d.y_hi)
    return x, y


def _comparable_values(comparable: ComparableSpec, x, y, t, v):
    b_c = np.asarray(comparable.b(x, y, t), float).reshape(v.b.shape)
    g_c = np.asarray(comparable.g(x, y, t), float).reshape(v.g.shape)
    return b_c, g_c


def reduced_parts(coeffs: CoefficientSet, comparable: ComparableSpec, x, y, t: float, values=None):
    """(v, D₁⁻¹v, Σ₁) at a batch of points."""
    v = values if values is not None else coeffs.evaluate(x, y, t)
    b_c, g_c = _comparable_values(comparable, x, y, t, v)
    vec = np.concatenate([v.b - b_c, v.g - g_c], axis=1)
    D1, Sigma1 = reduced_blocks(v)
    return vec, solve_reduced(D1, vec), Sigma1


def unreduced_parts(coeffs: CoefficientSet, comparable: ComparableSpec, x, y, t: float, epsilon: float, values=None):
    """(B − B̂, D⁻¹(B − B̂), Σ) from the ε-scaled blocks."""
    e = float(epsilon)
    v = values if values is not None else coeffs.evaluate(x, y, t)
    B, D, Sigma = assemble_batch(coeffs, x, y, t, e, v)
    b_c, g_c = _comparable_values(comparable, x, y, t, v)
    B_c = np.concatenate([b_c + v.f / e, g_c / e + v.c / e**2], axis=1)
    diff = B - B_c
    return diff, np.linalg.solve(D, diff[..., None])[..., 0], Sigma


def check_forward_epsilon_free(model: MultiscaleModel, comparable: ComparableSpec, eps_pair: Sequence[float] = EPS_PAIR, tol: float = EPS_FREE_TOL) -> float:
    """Relative deviation of the unreduced integrands from the reduced ones."""
    coeffs = model.coeffs
    x, y = sample_points(model)
    worst = 0.0
    for t in (0.0, 0.5 * model.T):
        vec, sol, Sigma1 = reduced_parts(coeffs, comparable, x, y, t)
        dw_ref = np.einsum("ni,nip->np", sol, Sigma1)
        dt_ref = 0.5 * np.sum(vec * sol, axis=1)
        scale = max(1.0, float(np.max(np.abs(dw_ref))), float(np.max(np.abs(dt_ref))))
        for e in eps_pair:
            diff, sol_e, Sigma = unreduced_parts(coeffs, comparable, x, y, t, e)
            dw = np.einsum("ni,nip->np", sol_e, Sigma)
            dt = 0.5 * np.sum(diff * sol_e, axis=1)
            worst = max(worst, float(np.max(np.abs(dw - dw_ref))) / scale, float(np.max(np.abs(dt - dt_ref))) / scale)
    if worst > tol:
        raise DivergentFunctionalError(
            f"forward integrands depend on epsilon (relative deviation {worst:.3e})", assumption="epsilon_free"
        )
    return worst


def forward_epsilon_integrands(
    model: MultiscaleModel,
    comparable: ComparableSpec,
    unreduced: bool = False,
    mutation: Optional[str] = None,
    check: bool = True,
) -> IntegrandBundle:
    if comparable.kind != FORWARD:
        raise DivergentFunctionalError("forward functional needs a forward comparable (shared f, c, sigma, eta)")
    if mutation is not None and mutation not in MUTATIONS:
        raise ConfigurationError(f"unknown mutation {mutation!r}; known: {list(MUTATIONS)}")
    if check:
        check_forward_epsilon_free(model, comparable)
    coeffs = model.coeffs
    key = f"forward:{id(comparable)}:{int(unreduced)}"

    def parts(state: StepState):
        def compute():
            if unreduced:
                return unreduced_parts(coeffs, comparable, state.x, state.y, state.t, state.epsilon, state.values)
            return reduced_parts(coeffs, comparable, state.x, state.y, state.t, state.values)

        return state.memo(key, compute)

    def dw(state: StepState) -> np.ndarray:
        _, sol, Sigma = parts(state)
        return np.einsum("ni,nip->np", sol, Sigma)

    sign = -1.0 if mutation == FLIP_DT else 1.0

    def dt(state: StepState) -> np.ndarray:
        vec, sol, _ = parts(state)
        return sign * 0.5 * np.sum(vec * sol, axis=1)

    return IntegrandBundle(dw=dw, dt=dt)


def forward_epsilon_spec(
    model: MultiscaleModel,
    comparable: ComparableSpec,
    name: str = "F_eps",
    unreduced: bool = False,
    mutation: Optional[str] = None,
    gated: bool = True,
) -> FunctionalSpec:
    bundle = forward_epsilon_integrands(model, comparable, unreduced=unreduced, mutation=mutation)
    flags = ()
    if unreduced:
        flags += ("unreduced",)
    if mutation:
        flags += (f"mutation:{mutation}",)
        logger.warning("Functional %s carries the %s mutation; its checks are expected to fail", name, mutation)
    return FunctionalSpec(name=name, side=FORWARD, role=EPSILON_LEVEL, comparable=comparable, bundle=bundle, gated=gated, flags=flags)
