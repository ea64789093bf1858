"""Experiment configuration, the synchronous round loop and its measurements."""

from .config import ROSTER, ExperimentConfig, QuadraticSpec, Setup, SoftmaxSpec, build_setup, scalar_toy_problem
from .metrics import CSV_FIELDS, MetricsRecord
from .runner import Simulation, run_experiment, run_round

__all__ = [
    "CSV_FIELDS",
    "ROSTER",
    "ExperimentConfig",
    "MetricsRecord",
    "QuadraticSpec",
    "Setup",
    "Simulation",
    "SoftmaxSpec",
    "build_setup",
    "scalar_toy_problem",
    "run_experiment",
    "run_round",
]
