"""Deterministic simulator for blockchain-based decentralized federated learning."""

from .config import ConfigError, SimulationConfig, config_from_dict, load_config
from .engine import RunResult, run
from .estimator import MLPClassifier
from .report import RunSummary, summarize

__all__ = [
    "ConfigError",
    "MLPClassifier",
    "RunResult",
    "RunSummary",
    "SimulationConfig",
    "config_from_dict",
    "load_config",
    "run",
    "summarize",
]

__version__ = "0.1.0"
