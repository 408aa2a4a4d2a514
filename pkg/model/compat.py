"""Compatibility residuals between a model, its comparable and the fast density.

coupling:      f + f̃ = ∇y·h + h∇y log ρ
fast_balance:  2c = ∇y·α + α∇y log ρ
parity[...]:   c_δ = c, a_δ = a, h_δ = h, α_δ = α
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from errors import InvalidDensityError
from model.assembly import div_y_alpha, div_y_h
from model.coefficients import CoefficientSet, Field
from model.parity import ParityVector, apply_parity, sample_residuals

COUPLING = "coupling"
FAST_BALANCE = "fast_balance"
PARITY = "parity"


@dataclass(frozen=True)
class CompatibilityReport:
    coupling_residual: float
    fast_balance_residual: float
    parity_residuals: Dict[str, float] = field(default_factory=dict)

    def max_residual(self) -> float:
        return max([self.coupling_residual, self.fast_balance_residual, *self.parity_residuals.values()])

    def as_dict(self) -> Dict[str, float]:
        out = {COUPLING: self.coupling_residual, FAST_BALANCE: self.fast_balance_residual}
        out.update({f"{PARITY}[{k}]": v for k, v in self.parity_residuals.items()})
        return out

    def failing(self, tol: float) -> Dict[str, float]:
        return {k: v for k, v in self.as_dict().items() if v > tol}

    def merged(self, other: "CompatibilityReport") -> "CompatibilityReport":
        """Componentwise max, for folding reports over many cells."""
        keys = set(self.parity_residuals) | set(other.parity_residuals)
        return CompatibilityReport(
            coupling_residual=max(self.coupling_residual, other.coupling_residual),
            fast_balance_residual=max(self.fast_balance_residual, other.fast_balance_residual),
            parity_residuals={
                k: max(self.parity_residuals.get(k, 0.0), other.parity_residuals.get(k, 0.0)) for k in keys
            },
        )


def _node_inputs(coeffs: CoefficientSet, rho, grid):
    y = grid.points
    x = np.broadcast_to(np.asarray(rho.x, float), (y.shape[0], coeffs.m))
    return x, y, float(rho.t)


def check_compatible_conditions(
    coeffs: CoefficientSet,
    f_tilde: Field,
    rho,
    grid=None,
    parity: Optional[ParityVector] = None,
) -> CompatibilityReport:
    """Max-norm residuals of the compatibility identities over the cell grid.

    ``rho`` is a CellSolution; ``grid`` defaults to its own FastGrid. Residuals
    are reported, never thrown; the caller compares them against a tolerance.
    """
    grid = grid if grid is not None else rho.grid
    values = np.asarray(rho.rho, float)
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise InvalidDensityError(f"pseudo-stationary density is not strictly positive at x={rho.x}, t={rho.t}")
    x, y, t = _node_inputs(coeffs, rho, grid)
    v = coeffs.evaluate(x, y, t)
    dlog = grid.gradient(np.log(values))

    coupling_lhs = v.f + np.asarray(f_tilde(x, y, t), float)
    coupling_rhs = div_y_h(coeffs, x, y, t) + np.einsum("nik,nk->ni", v.h, dlog)
    balance_lhs = 2.0 * v.c
    balance_rhs = div_y_alpha(coeffs, x, y, t) + np.einsum("nik,nk->ni", v.alpha, dlog)

    parity_res: Dict[str, float] = {}
    if parity is not None:
        parity_res = sample_residuals(coeffs, apply_parity(coeffs, parity), x, y, t)
    return CompatibilityReport(
        coupling_residual=float(np.max(np.abs(coupling_lhs - coupling_rhs))),
        fast_balance_residual=float(np.max(np.abs(balance_lhs - balance_rhs))),
        parity_residuals=parity_res,
    )
