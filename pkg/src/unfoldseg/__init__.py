"""Concealed-object segmentation by alternating proximal optimisation and its unfolded network."""

from .cos_model import SolverConfig
from .solver import SolveResult, solve

__version__ = "0.1.0"

__all__ = ["SolveResult", "SolverConfig", "solve", "__version__"]
