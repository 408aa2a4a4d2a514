"""Path simulation: noise streams, engines, stopping and Gaussian laws."""
from paths.engine import simulate_multiscale
from paths.gaussian import GaussianPath, GaussianState, evolve_gaussian_moments
from paths.limit import simulate_limit_system
from paths.records import StoppingRule, TrajectoryRecord, apply_stopping, merge
from paths.state import StepState

__all__ = [
    "GaussianPath",
    "GaussianState",
    "StepState",
    "StoppingRule",
    "TrajectoryRecord",
    "apply_stopping",
    "evolve_gaussian_moments",
    "merge",
    "simulate_limit_system",
    "simulate_multiscale",
]
