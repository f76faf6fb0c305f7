"""Simulated MPC runtime and (1+eps)-approximate weighted b-matching."""

from .graph import BMatching, BudgetVector, Graph, GraphError, validate_bmatching
from .mpc import MachineCluster
from .oracle import exact_max_bmatching

__version__ = "0.1.0"

__all__ = ["BMatching", "BudgetVector", "Graph", "GraphError", "MachineCluster",
           "exact_max_bmatching", "validate_bmatching", "__version__"]
