"""Averaged slow dynamics and the extended systems of the limit functionals."""
from averaging.extended import (
    BackwardFields,
    ExtendedSystem,
    compute_extended_backward,
    compute_extended_forward,
    default_fast_density,
)
from averaging.mu import MuField, solve_mu
from averaging.quadrature import average_generator
from averaging.reduced import AveragedModel, compute_averaged_coefficients
from averaging.xt import XTGrid

__all__ = [
    "AveragedModel",
    "BackwardFields",
    "ExtendedSystem",
    "MuField",
    "XTGrid",
    "average_generator",
    "compute_averaged_coefficients",
    "compute_extended_backward",
    "compute_extended_forward",
    "default_fast_density",
    "solve_mu",
]
