"""Discrete-round simulator of incentive-driven federated learning over
mobile regions: replicator-dynamics region selection, multi-objective
reassignment of interrupted training tasks, and a greedy procurement
auction with critical-value payments."""

__version__ = "0.1.0"

from fedmob._backend import backend_name

__all__ = ["backend_name", "__version__"]
