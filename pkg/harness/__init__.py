"""Experiment configuration, runner, statistics and result files."""
from harness.config import ExperimentConfig, load_config
from harness.runner import run_experiment
from harness.stats import EnsembleStats, Thresholds, Verdict

__all__ = [
    "EnsembleStats",
    "ExperimentConfig",
    "Thresholds",
    "Verdict",
    "load_config",
    "run_experiment",
]
