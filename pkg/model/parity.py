"""Parity (time-reversal sign) transforms of coefficient sets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from errors import ModelEvaluationError
from model.coefficients import AffineForm, CoefficientSet


@dataclass(frozen=True)
class ParityVector:
    """Signs δ for (x, y), slow entries first; +1 even, −1 odd."""

    delta: Tuple[int, ...]

    def __post_init__(self):
        if not self.delta or any(d not in (1, -1) for d in self.delta):
            raise ModelEvaluationError(f"parity entries must be exactly +1 or -1, got {self.delta}")

    @classmethod
    def even(cls, size: int) -> "ParityVector":
        return cls(tuple([1] * size))

    @classmethod
    def parse(cls, text: str) -> "ParityVector":
        return cls(tuple(int(float(part)) for part in text.replace(";", ",").split(",") if part.strip()))

    def split(self, m: int) -> Tuple[np.ndarray, np.ndarray]:
        arr = np.asarray(self.delta, dtype=float)
        return arr[:m], arr[m:]

    @property
    def is_even(self) -> bool:
        return all(d == 1 for d in self.delta)


def _check(coeffs: CoefficientSet, delta: ParityVector) -> None:
    if len(delta.delta) != coeffs.m + coeffs.n:
        raise ModelEvaluationError(
            f"parity length {len(delta.delta)} does not match m + n = {coeffs.m + coeffs.n}"
        )


def _affine_parity(form: AffineForm, dx: np.ndarray, dy: np.ndarray) -> AffineForm:
    Dx, Dy = np.diag(dx), np.diag(dy)

    def _scaled(offset, signs):
        if offset is None:
            return None
        return lambda t: signs * np.asarray(offset(t), float)

    return AffineForm(
        bx=Dx @ form.bx @ Dx,
        by=Dx @ form.by @ Dy,
        fx=Dx @ form.fx @ Dx,
        fy=Dx @ form.fy @ Dy,
        gx=Dy @ form.gx @ Dx,
        gy=Dy @ form.gy @ Dy,
        cx=Dy @ form.cx @ Dx,
        cy=Dy @ form.cy @ Dy,
        sigma=Dx @ form.sigma,
        eta=Dy @ form.eta,
        b0=_scaled(form.b0, dx),
        f0=_scaled(form.f0, dx),
        g0=_scaled(form.g0, dy),
        c0=_scaled(form.c0, dy),
    )


def apply_parity(coeffs: CoefficientSet, delta: ParityVector) -> CoefficientSet:
    """b_δ(x,y,t) = δx·b(δx, δy, t), likewise f; g and c carry δy.

    σ and η rows are signed so that a_δ = δxδx'·a, h_δ = δxδy'·h and
    α_δ = δyδy'·α follow.
    """
    _check(coeffs, delta)
    dx, dy = delta.split(coeffs.m)
    if coeffs.affine is not None:
        return CoefficientSet.from_affine(_affine_parity(coeffs.affine, dx, dy), coeffs.time_dependent)

    def _vec(fieldfn, signs):
        return lambda x, y, t: signs * fieldfn(x * dx, y * dy, t)

    def _mat(fieldfn, signs):
        return lambda x, y, t: signs[:, None] * fieldfn(x * dx, y * dy, t)

    return CoefficientSet(
        m=coeffs.m,
        n=coeffs.n,
        p=coeffs.p,
        b=_vec(coeffs.b, dx),
        f=_vec(coeffs.f, dx),
        g=_vec(coeffs.g, dy),
        c=_vec(coeffs.c, dy),
        sigma=_mat(coeffs.sigma, dx),
        eta=_mat(coeffs.eta, dy),
        affine=None,
        time_dependent=coeffs.time_dependent,
    )


def sample_residuals(original: CoefficientSet, transformed: CoefficientSet, x, y, t) -> dict:
    """Max-abs differences of c, a, h, α between two coefficient sets."""
    v0 = original.evaluate(x, y, t)
    v1 = transformed.evaluate(x, y, t)
    return {
        name: float(np.max(np.abs(getattr(v1, name) - getattr(v0, name))))
        for name in ("c", "a", "h", "alpha")
    }
