"""Block assembly of the joint drift B, diffusion D and loading Σ.

B = (b + ε⁻¹f, ε⁻¹g + ε⁻²c), Σ = (σ; ε⁻¹η), D = ΣΣ'. With S = diag(I, ε⁻¹I)
we have D = S D₁ S and Σ = S Σ₁, where D₁, Σ₁ are the ε = 1 blocks. Every
"reduced form" integrand is written against D₁ and Σ₁.
"""
from __future__ import annotations

import logging
from typing import Tuple

import numpy as np

from errors import SingularDiffusionError
from model import fd
from model.coefficients import CoefficientSet, FieldValues, MultiscaleModel, as_batch

logger = logging.getLogger(__name__)

RCOND_MIN = 1e-12


def assemble_batch(coeffs: CoefficientSet, x, y, t: float, epsilon: float, values: FieldValues = None):
    """Vectorized B (N, m+n), D (N, d, d), Σ (N, d, p) at one epsilon."""
    v = values if values is not None else coeffs.evaluate(x, y, t)
    e = float(epsilon)
    B = np.concatenate([v.b + v.f / e, v.g / e + v.c / e**2], axis=1)
    Sigma = np.concatenate([v.sigma, v.eta / e], axis=1)
    D = np.einsum("nip,njp->nij", Sigma, Sigma)
    return B, D, Sigma


def reduced_blocks(values: FieldValues) -> Tuple[np.ndarray, np.ndarray]:
    """D₁ = [[a, h], [h', α]] and Σ₁ = [σ; η]."""
    top = np.concatenate([values.a, values.h], axis=2)
    bottom = np.concatenate([np.swapaxes(values.h, 1, 2), values.alpha], axis=2)
    D1 = np.concatenate([top, bottom], axis=1)
    Sigma1 = np.concatenate([values.sigma, values.eta], axis=1)
    return D1, Sigma1


def rcond(matrix: np.ndarray) -> np.ndarray:
    """Reciprocal 2-norm condition number for a stack of square matrices."""
    s = np.linalg.svd(matrix, compute_uv=False)
    top = s[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(top > 0, s[..., -1] / top, 0.0)
    return out


def check_nonsingular(D: np.ndarray, x, y, t: float) -> None:
    rc = rcond(D)
    bad = rc < RCOND_MIN
    if np.any(bad):
        i = int(np.argmax(bad))
        raise SingularDiffusionError(
            "diffusion matrix D is numerically singular",
            point=(np.atleast_2d(x)[i].tolist(), np.atleast_2d(y)[i].tolist(), t),
            rcond=float(rc[i]),
        )


def assemble_drift_diffusion(model: MultiscaleModel, point):
    """B, D, Σ at one point (x, y, t) of ``model``."""
    x, y, t = point
    x = as_batch(x, model.m)
    y = as_batch(y, model.n)
    B, D, Sigma = assemble_batch(model.coeffs, x, y, float(t), model.epsilon)
    check_nonsingular(D, x, y, float(t))
    return B[0], D[0], Sigma[0]


def solve_reduced(D1: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """D₁⁻¹ v for stacks; raises when D₁ is singular."""
    rc = rcond(D1)
    if np.any(rc < RCOND_MIN):
        i = int(np.argmax(rc < RCOND_MIN))
        raise SingularDiffusionError("reduced diffusion D1 is numerically singular", rcond=float(rc[i]))
    return np.linalg.solve(D1, vec[..., None])[..., 0]


# --- divergences of the diffusion blocks -------------------------------------

def div_x_a(coeffs: CoefficientSet, x, y, t, step=fd.DEFAULT_STEP):
    return fd.div_x(lambda xx, yy, tt: coeffs.evaluate(xx, yy, tt).a, x, y, t, step)


def div_y_h(coeffs: CoefficientSet, x, y, t, step=fd.DEFAULT_STEP):
    return fd.div_y(lambda xx, yy, tt: coeffs.evaluate(xx, yy, tt).h, x, y, t, step)


def div_x_ht(coeffs: CoefficientSet, x, y, t, step=fd.DEFAULT_STEP):
    return fd.div_x(lambda xx, yy, tt: np.swapaxes(coeffs.evaluate(xx, yy, tt).h, 1, 2), x, y, t, step)


def div_y_alpha(coeffs: CoefficientSet, x, y, t, step=fd.DEFAULT_STEP):
    return fd.div_y(lambda xx, yy, tt: coeffs.evaluate(xx, yy, tt).alpha, x, y, t, step)


def auxiliary_drift(coeffs: CoefficientSet, x, y, t: float, epsilon: float, step=fd.DEFAULT_STEP):
    """B̄ = ½(∇x·a + ε⁻¹∇y·h ; ε⁻¹∇x·h' + ε⁻²∇y·α), so that ∇·D = 2B̄."""
    e = float(epsilon)
    slow = 0.5 * (div_x_a(coeffs, x, y, t, step) + div_y_h(coeffs, x, y, t, step) / e)
    fast = 0.5 * (div_x_ht(coeffs, x, y, t, step) / e + div_y_alpha(coeffs, x, y, t, step) / e**2)
    return np.concatenate([slow, fast], axis=1)
