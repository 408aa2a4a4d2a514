"""Comparable processes that thermodynamic functionals are measured against."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from errors import ModelEvaluationError
from model.coefficients import CoefficientSet, Field
from model.parity import ParityVector

FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True, eq=False)
class ComparableSpec:
    """Forward kind overrides b and g only (f, c, σ, η are shared with the
    original). Backward kind also overrides f and carries a parity vector."""

    kind: str
    b: Field
    g: Field
    f_tilde: Optional[Field] = None
    parity: Optional[ParityVector] = None
    label: str = ""

    def __post_init__(self):
        if self.kind == FORWARD:
            if self.f_tilde is not None or self.parity is not None:
                raise ModelEvaluationError("forward comparable shares f with the original; no f override allowed")
        elif self.kind == BACKWARD:
            if self.f_tilde is None:
                raise ModelEvaluationError("backward comparable requires f_tilde")
        else:
            raise ModelEvaluationError(f"unknown comparable kind {self.kind!r}")

    @property
    def b_hat(self) -> Field:
        return self.b

    @property
    def g_hat(self) -> Field:
        return self.g

    @property
    def b_tilde(self) -> Field:
        return self.b

    @property
    def g_tilde(self) -> Field:
        return self.g


def original_forward(coeffs: CoefficientSet) -> ComparableSpec:
    return ComparableSpec(kind=FORWARD, b=coeffs.b, g=coeffs.g, label="original")


def shifted_forward(coeffs: CoefficientSet, shift: float) -> ComparableSpec:
    """b̂ = b + shift in every slow component, ĝ = g."""
    return ComparableSpec(
        kind=FORWARD,
        b=lambda x, y, t: coeffs.b(x, y, t) + shift,
        g=coeffs.g,
        label=f"shift({shift:g})",
    )


def backward_from(coeffs: CoefficientSet, parity: ParityVector, label: str = "") -> ComparableSpec:
    """Backward comparable whose drift fields are taken from ``coeffs``."""
    return ComparableSpec(kind=BACKWARD, b=coeffs.b, g=coeffs.g, f_tilde=coeffs.f, parity=parity, label=label)
