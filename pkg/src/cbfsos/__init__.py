"""CLF-CBF quadratic-program safety filters with sum-of-squares certificates."""

from .cbf_qp import Region, SystemModel, load_model, save_model, solve_filter, solve_filter_batch
from .poly import PolyMatrix, Polynomial, variables

__version__ = "0.1.0"

__all__ = [
    "PolyMatrix",
    "Polynomial",
    "Region",
    "SystemModel",
    "load_model",
    "save_model",
    "solve_filter",
    "solve_filter_batch",
    "variables",
    "__version__",
]
