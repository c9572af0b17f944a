"""Experiment harness: configuration, multi-seed runs, protocols and self-checks."""

from .config import METHODS, ConfigError, ExperimentConfig, parse_config
from .experiment import derive_seed, run_experiment, run_noisy_protocol, run_sweep
from .verify import verify

__all__ = ["METHODS", "ConfigError", "ExperimentConfig", "parse_config", "derive_seed",
           "run_experiment", "run_noisy_protocol", "run_sweep", "verify"]
