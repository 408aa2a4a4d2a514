"""Thermodynamic functionals: integrands, limit decompositions and physical builders."""
from functionals.backward import backward_epsilon_accumulator, backward_epsilon_integrands, reduced_backward_integrands
from functionals.densities import joint_density_for, reduced_density_for
from functionals.forward import forward_epsilon_integrands, forward_epsilon_spec
from functionals.limits import limit_backward_decomposition, limit_forward_decomposition
from functionals.physics import make_entropy_production_spec, make_housekeeping_spec, reversed_comparable
from functionals.spec import FunctionalSpec, IntegrandBundle

__all__ = [
    "FunctionalSpec",
    "IntegrandBundle",
    "backward_epsilon_accumulator",
    "backward_epsilon_integrands",
    "forward_epsilon_integrands",
    "forward_epsilon_spec",
    "joint_density_for",
    "limit_backward_decomposition",
    "limit_forward_decomposition",
    "make_entropy_production_spec",
    "make_housekeeping_spec",
    "reduced_backward_integrands",
    "reduced_density_for",
    "reversed_comparable",
]
