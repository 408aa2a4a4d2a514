"""Backward functional at finite ε: the I + H split and the direct Girsanov form.

Direct form, with q = S⁻¹(B + B̃ − 2B̄):
    G^ε = ∫ q'D₁⁻¹Σ₁ dW + ∫ [½q'D₁⁻¹q + ∇·(B̃ − B̄)] dt + log p^ε(0) − log p^ε(t)
Split form: G^ε = I^ε + H^ε with I^ε = log(p^ε/ρ)(0) − log(p^ε/ρ)(t) and H^ε
driven by the ε-free loading σ_H and drift b_H + f_H/ε.
"""
from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from averaging.extended import BackwardFields
from cells.density import FastDensity
from errors import DivergentFunctionalError
from functionals.densities import JointDensity
from functionals.forward import sample_points
from functionals.spec import EPSILON_LEVEL, FunctionalSpec, IntegrandBundle, summed
from model import fd
from model.assembly import (
    auxiliary_drift,
    div_x_a,
    div_x_ht,
    div_y_alpha,
    div_y_h,
    reduced_blocks,
    solve_reduced,
)
from model.coefficients import CoefficientSet, MultiscaleModel, as_batch
from model.comparable import BACKWARD, ComparableSpec
from model.compat import COUPLING, FAST_BALANCE, CompatibilityReport
from paths.state import StepState

logger = logging.getLogger(__name__)

COMPAT_TOL = 1e-6
NAMES = ("G_eps", "H_eps", "I_eps", "G_eps_direct")


def _field(fn, x, y, t, shape):
    return np.asarray(fn(x, y, t), float).reshape(shape)


def pointwise_compatibility(coeffs: CoefficientSet, comparable: ComparableSpec, density: FastDensity, x, y, t: float) -> CompatibilityReport:
    """Compatibility residuals at given points using a pointwise fast density."""
    x = as_batch(x, coeffs.m)
    y = as_batch(y, coeffs.n)
    v = coeffs.evaluate(x, y, t)
    dly = density.grad_y_log_rho(x, y, t)
    f_t = _field(comparable.f_tilde, x, y, t, v.f.shape)
    coupling = v.f + f_t - div_y_h(coeffs, x, y, t) - np.einsum("nik,nk->ni", v.h, dly)
    balance = 2.0 * v.c - div_y_alpha(coeffs, x, y, t) - np.einsum("nik,nk->ni", v.alpha, dly)
    return CompatibilityReport(float(np.max(np.abs(coupling))), float(np.max(np.abs(balance))))


def require_compatible(report: CompatibilityReport, tol: float = COMPAT_TOL) -> None:
    failing = {k: v for k, v in report.as_dict().items() if k in (COUPLING, FAST_BALANCE) and v > tol}
    if failing:
        raise DivergentFunctionalError(
            "compatibility residuals above tolerance: " + ", ".join(f"{k}={v:.3e}" for k, v in sorted(failing.items())),
            assumption=", ".join(sorted(failing)),
        )


def div_auxiliary_drift(coeffs: CoefficientSet, x, y, t: float, epsilon: float) -> np.ndarray:
    """∇·B̄ in the original coordinates; zero for constant diffusions."""
    if coeffs.affine is not None:
        return np.zeros(as_batch(x, coeffs.m).shape[0])
    m = coeffs.m
    slow = fd.div_x(lambda xx, yy, tt: auxiliary_drift(coeffs, xx, yy, tt, epsilon)[:, :m], x, y, t, fd.NESTED_STEP)
    fast = fd.div_y(lambda xx, yy, tt: auxiliary_drift(coeffs, xx, yy, tt, epsilon)[:, m:], x, y, t, fd.NESTED_STEP)
    return slow + fast


def div_comparable_drift(coeffs: CoefficientSet, comparable: ComparableSpec, x, y, t: float, epsilon: float) -> np.ndarray:
    """∇·B̃ with B̃ = (b̃ + f̃/ε, g̃/ε + c/ε²); the comparable shares c."""
    e = float(epsilon)
    out = fd.div_x(comparable.b, x, y, t) + fd.div_x(comparable.f_tilde, x, y, t) / e
    out = out + fd.div_y(comparable.g, x, y, t) / e + fd.div_y(coeffs.c, x, y, t) / e**2
    return out


def direct_q(coeffs: CoefficientSet, comparable: ComparableSpec, x, y, t: float, epsilon: float, values=None) -> np.ndarray:
    e = float(epsilon)
    v = values if values is not None else coeffs.evaluate(x, y, t)
    b_t = _field(comparable.b, x, y, t, v.b.shape)
    g_t = _field(comparable.g, x, y, t, v.g.shape)
    f_t = _field(comparable.f_tilde, x, y, t, v.f.shape)
    if coeffs.affine is not None:
        q_x = v.b + b_t + (v.f + f_t) / e
        q_y = v.g + g_t + 2.0 * v.c / e
    else:
        q_x = v.b + b_t - div_x_a(coeffs, x, y, t) + (v.f + f_t - div_y_h(coeffs, x, y, t)) / e
        q_y = v.g + g_t - div_x_ht(coeffs, x, y, t) + (2.0 * v.c - div_y_alpha(coeffs, x, y, t)) / e
    return np.concatenate([q_x, q_y], axis=1)


def log_rho_quadratic(fast: FastDensity, state: StepState) -> np.ndarray:
    """−½ Σ'∇²log ρ Σ with Σ = (σ; η/ε), the (P, p, p) quad loading of −Δ log ρ."""
    v = state.values
    Sigma = np.concatenate([v.sigma, v.eta / state.epsilon], axis=1)
    hess = fast.hessian_log_rho(state.x, state.y, state.t)
    return -0.5 * np.einsum("nip,nij,njq->npq", Sigma, hess, Sigma)


def backward_epsilon_integrands(
    model: MultiscaleModel, comparable: ComparableSpec, joint: JointDensity, fast: Optional[FastDensity] = None
) -> IntegrandBundle:
    """Direct form: integrands plus the boundary log p^ε(0) − log p^ε(t).

    Under compatibility the 1/ε part of the loading is the fast score of ρ, so
    with ``fast`` the step also carries ½ Σ'∇²log ρ Σ on the centred squared
    increments. That term has zero mean and keeps the direct form within O(dt)
    of the split form per path; without it the gap is O(√dt).
    """
    coeffs = model.coeffs

    def parts(state: StepState):
        def compute():
            q = direct_q(coeffs, comparable, state.x, state.y, state.t, state.epsilon, state.values)
            D1, Sigma1 = reduced_blocks(state.values)
            return q, solve_reduced(D1, q), Sigma1

        return state.memo(f"backward-direct:{id(comparable)}", compute)

    def dw(state: StepState) -> np.ndarray:
        _, sol, Sigma1 = parts(state)
        return np.einsum("ni,nip->np", sol, Sigma1)

    def dt(state: StepState) -> np.ndarray:
        q, sol, _ = parts(state)
        e = state.epsilon
        div_term = div_comparable_drift(coeffs, comparable, state.x, state.y, state.t, e) - div_auxiliary_drift(
            coeffs, state.x, state.y, state.t, e
        )
        return 0.5 * np.sum(q * sol, axis=1) + div_term

    def boundary(x0, y0, x, y, t):
        return joint.log_p(x0, y0, 0.0) - joint.log_p(x, y, t)

    if fast is None:
        return IntegrandBundle(dw=dw, dt=dt, boundary=boundary)
    return IntegrandBundle(dw=dw, dt=dt, boundary=boundary, quad=lambda state: -log_rho_quadratic(fast, state))


def split_integrands(model: MultiscaleModel, comparable: ComparableSpec, joint: JointDensity, fast: FastDensity):
    """(H^ε bundle, I^ε bundle)."""
    fields = BackwardFields(model.coeffs, comparable, fast)

    def sigma_h(state: StepState):
        return state.memo(
            f"sigma-h:{id(comparable)}", lambda: fields.sigma_m1(state.x, state.y, state.t, state.values)
        )

    def dt(state: StepState) -> np.ndarray:
        s = sigma_h(state)
        V = fields.V(state.x, state.y, state.t)
        div_V = fd.div_x(fields.V, state.x, state.y, state.t, fields.step)
        dlx = fast.grad_x_log_rho(state.x, state.y, state.t)
        b_h = 0.5 * np.sum(s * s, axis=1) + div_V + np.sum(V * dlx, axis=1) - fast.dt_log_rho(state.x, state.y, state.t)
        return b_h + fields.f_m1(state.x, state.y, state.t) / state.epsilon

    def boundary(x0, y0, x, y, t):
        start = joint.log_p(x0, y0, 0.0) - fast.log_rho(x0, y0, 0.0)
        return start - (joint.log_p(x, y, t) - fast.log_rho(x, y, t))

    return IntegrandBundle(dw=sigma_h, dt=dt), IntegrandBundle(boundary=boundary)


def reduced_backward_integrands(model: MultiscaleModel, comparable: ComparableSpec, joint: JointDensity, fast: FastDensity) -> IntegrandBundle:
    """G^ε = H^ε + I^ε as one bundle: ε-free loading, no ε⁻² drift terms."""
    h, i = split_integrands(model, comparable, joint, fast)
    return IntegrandBundle(dw=h.dw, dt=h.dt, boundary=i.boundary)


def backward_epsilon_accumulator(
    model: MultiscaleModel,
    comparable: ComparableSpec,
    joint: JointDensity,
    fast: FastDensity,
    report: Optional[CompatibilityReport] = None,
    names: Sequence[str] = NAMES,
    compat_tol: float = COMPAT_TOL,
    gated: bool = True,
):
    """Specs for G^ε = H^ε + I^ε, its parts, and the direct form as a cross-check.

    The gated G^ε is the split sum; the direct form keeps the 1/ε drift of
    B + B̃ − 2B̄ and is reported only. Without a precomputed ``report`` the
    compatibility conditions are checked at sample points with ``fast``.
    """
    if comparable.kind != BACKWARD:
        raise DivergentFunctionalError("backward functional needs a backward comparable")
    if report is None:
        x, y = sample_points(model)
        report = pointwise_compatibility(model.coeffs, comparable, fast, x, y, 0.0)
    require_compatible(report, compat_tol)
    flags = tuple(joint.flags)
    if flags:
        logger.warning("Backward functional boundary terms use %s", ", ".join(flags))
    g_name, h_name, i_name, direct_name = names
    h_bundle, i_bundle = split_integrands(model, comparable, joint, fast)
    h_spec = FunctionalSpec(name=h_name, side=BACKWARD, role=EPSILON_LEVEL, comparable=comparable, bundle=h_bundle, gated=False)
    i_spec = FunctionalSpec(name=i_name, side=BACKWARD, role=EPSILON_LEVEL, comparable=comparable, bundle=i_bundle, gated=False, flags=flags)
    total = summed(g_name, [h_spec, i_spec], gated=gated)
    direct = FunctionalSpec(
        name=direct_name,
        side=BACKWARD,
        role=EPSILON_LEVEL,
        comparable=comparable,
        bundle=backward_epsilon_integrands(model, comparable, joint, fast),
        gated=False,
        flags=flags,
    )
    return [h_spec, i_spec, total, direct]
