"""Personalized federated learning: pure local training, FedAvg and
two-stage soft weight sharing on convex problems with planted heterogeneity."""

from .exceptions import ConfigError, InfeasibleInstanceError, InputError

__version__ = "0.1.0"

__all__ = ["ConfigError", "InfeasibleInstanceError", "InputError", "__version__"]
