"""Experiment configuration, orchestration, and report emission."""

from .config import ConfigError, ExperimentConfig, parse_config
from .experiment import CacheError, run_experiment
from .report import Report, write_report

__all__ = [
    "CacheError",
    "ConfigError",
    "ExperimentConfig",
    "Report",
    "parse_config",
    "run_experiment",
    "write_report",
]
