"""Multiscale diffusion models: coefficients, assembly, parity, compatibility."""
from model.assembly import assemble_batch, assemble_drift_diffusion, auxiliary_drift, reduced_blocks
from model.catalog import MODEL_NAMES, build_model
from model.coefficients import (
    AffineForm,
    CoefficientSet,
    Domain,
    FieldValues,
    GaussianInit,
    LinearSDE,
    MultiscaleModel,
)
from model.comparable import BACKWARD, FORWARD, ComparableSpec
from model.compat import CompatibilityReport, check_compatible_conditions
from model.parity import ParityVector, apply_parity

__all__ = [
    "AffineForm",
    "BACKWARD",
    "CoefficientSet",
    "ComparableSpec",
    "CompatibilityReport",
    "Domain",
    "FORWARD",
    "FieldValues",
    "GaussianInit",
    "LinearSDE",
    "MODEL_NAMES",
    "MultiscaleModel",
    "ParityVector",
    "apply_parity",
    "assemble_batch",
    "assemble_drift_diffusion",
    "auxiliary_drift",
    "build_model",
    "check_compatible_conditions",
    "reduced_blocks",
]
