"""Entropy production and housekeeping functionals built from a model and a parity."""
from __future__ import annotations

import logging
from typing import Optional, Tuple

import numpy as np

from cells.density import FastDensity
from cells.table import CellTable
from errors import IneligibleModelError
from functionals.backward import COMPAT_TOL, backward_epsilon_integrands, pointwise_compatibility, reduced_backward_integrands
from functionals.densities import JointDensity
from functionals.forward import forward_epsilon_spec, sample_points
from functionals.spec import EPSILON_LEVEL, FunctionalSpec
from model.assembly import div_x_a, div_x_ht
from model.coefficients import CoefficientSet, MultiscaleModel, as_batch
from model.comparable import BACKWARD, FORWARD, ComparableSpec, backward_from
from model.compat import CompatibilityReport, check_compatible_conditions
from model.parity import ParityVector, apply_parity, sample_residuals

logger = logging.getLogger(__name__)

ENTROPY = "S_tot"
HOUSEKEEPING = "S_hk"


def reversed_comparable(coeffs: CoefficientSet, parity: ParityVector) -> ComparableSpec:
    """Time reversal under the reversed protocol: b̃ = b_δ, g̃ = g_δ, f̃ = f_δ."""
    return backward_from(apply_parity(coeffs, parity), parity, label="reversed")


def eligibility_report(
    model: MultiscaleModel,
    comparable: ComparableSpec,
    parity: ParityVector,
    fast: Optional[FastDensity] = None,
    cells: Optional[CellTable] = None,
    nodes=None,
) -> CompatibilityReport:
    """Compatibility and parity residuals over cell nodes, or at sample points."""
    coeffs = model.coeffs
    if cells is not None and nodes is not None:
        report = None
        for x, t in nodes:
            r = check_compatible_conditions(coeffs, comparable.f_tilde, cells.get(x, t), parity=parity)
            report = r if report is None else report.merged(r)
        return report
    x, y = sample_points(model)
    base = pointwise_compatibility(coeffs, comparable, fast, x, y, 0.0)
    parity_res = sample_residuals(coeffs, apply_parity(coeffs, parity), x, y, 0.0)
    return CompatibilityReport(base.coupling_residual, base.fast_balance_residual, parity_res)


def _require_eligible(report: CompatibilityReport, tol: float, what: str) -> None:
    failing = report.failing(tol)
    if failing:
        raise IneligibleModelError(f"model is not eligible for {what}", residuals=report.as_dict())


def make_entropy_production_spec(
    model: MultiscaleModel,
    parity: ParityVector,
    joint: JointDensity,
    fast: Optional[FastDensity] = None,
    cells: Optional[CellTable] = None,
    nodes=None,
    tol: float = COMPAT_TOL,
    name: str = ENTROPY,
) -> Tuple[ComparableSpec, FunctionalSpec]:
    comparable = reversed_comparable(model.coeffs, parity)
    report = eligibility_report(model, comparable, parity, fast, cells, nodes)
    _require_eligible(report, tol, "entropy production")
    flags = tuple(joint.flags)
    if fast is not None:
        bundle = reduced_backward_integrands(model, comparable, joint, fast)
    else:
        # no pointwise fast density: fall back to the direct form
        bundle = backward_epsilon_integrands(model, comparable, joint)
        flags += ("direct_form",)
    spec = FunctionalSpec(name=name, side=BACKWARD, role=EPSILON_LEVEL, comparable=comparable, bundle=bundle, flags=flags)
    return comparable, spec


def adjoint_comparable(coeffs: CoefficientSet, parity: ParityVector, mu, fast: FastDensity) -> ComparableSpec:
    """Leading-order adjoint: b̂ = −b_δ + ∇ₓ·a + a∇ₓ(log μ + log ρ), ĝ likewise with h'."""
    reflected = apply_parity(coeffs, parity)
    m = coeffs.m

    def grad_log(x, y, t):
        return mu.grad_log_mu(x, t) + fast.grad_x_log_rho(x, y, t)

    def b_hat(x, y, t):
        x = as_batch(x, m)
        v = coeffs.evaluate(x, y, t)
        b_d = np.asarray(reflected.b(x, y, t), float).reshape(v.b.shape)
        return -b_d + div_x_a(coeffs, x, y, t) + np.einsum("nij,nj->ni", v.a, grad_log(x, y, t))

    def g_hat(x, y, t):
        x = as_batch(x, m)
        v = coeffs.evaluate(x, y, t)
        g_d = np.asarray(reflected.g(x, y, t), float).reshape(v.g.shape)
        return -g_d + div_x_ht(coeffs, x, y, t) + np.einsum("nji,nj->ni", v.h, grad_log(x, y, t))

    return ComparableSpec(kind=FORWARD, b=b_hat, g=g_hat, label="adjoint")


def make_housekeeping_spec(
    model: MultiscaleModel,
    parity: ParityVector,
    mu,
    fast: FastDensity,
    cells: Optional[CellTable] = None,
    nodes=None,
    tol: float = COMPAT_TOL,
    name: str = HOUSEKEEPING,
) -> Tuple[ComparableSpec, FunctionalSpec]:
    """Forward functional against the adjoint process.

    The adjoint keeps ĉ = c and f̂ = f, which is exact only to leading order in ε.
    """
    eligibility = reversed_comparable(model.coeffs, parity)
    report = eligibility_report(model, eligibility, parity, fast, cells, nodes)
    _require_eligible(report, tol, "housekeeping heat")
    logger.warning("Housekeeping comparable uses the leading-order adjoint (c and f unchanged); finite-eps corrections are ignored")
    comparable = adjoint_comparable(model.coeffs, parity, mu, fast)
    return comparable, forward_epsilon_spec(model, comparable, name=name)
