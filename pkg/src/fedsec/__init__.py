"""Federated next-event prediction for security logs, with robust aggregation,
backdoor and membership-inference attacks, and contribution analysis."""

from .errors import ConfigError, DimensionError, EmptyCorpusError, FedSecError, ParseError, TrainingError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "EmptyCorpusError",
    "FedSecError",
    "ParseError",
    "TrainingError",
    "__version__",
]
