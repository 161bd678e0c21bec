"""Simulation kit: configuration, link synthesis, scenarios and result files."""

from .config import ConfigError, ExperimentConfig, build_config, load_config
from .results import ResultTable, write_outputs
from .scenarios import RUNNERS, run_experiment

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ResultTable",
    "RUNNERS",
    "build_config",
    "load_config",
    "run_experiment",
    "write_outputs",
]
