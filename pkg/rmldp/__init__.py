"""
rmldp - precise large deviations for products of random matrices

Transfer-operator eigenobjects, the rate function with its Cramer corrections,
and exact or importance-sampled estimates to compare the closed-form
asymptotics against.
"""

__version__ = "0.1.0"
__license__ = "MIT"

from .cumulant import CumulantModel, build_model
from .ensemble import load_ensemble, validate
from .models import ExperimentConfig, MatrixEnsemble
from .spectral import build_grid, solve_eigen

__all__ = [
    "CumulantModel",
    "ExperimentConfig",
    "MatrixEnsemble",
    "build_grid",
    "build_model",
    "load_ensemble",
    "solve_eigen",
    "validate",
    "__version__",
]
