"""rpgauss: Euclidean-invariant, reflection-positive Gaussian field toolkit.

A lattice laboratory for regularized Euclidean field measures: the free
Gaussian field with covariance (p^2 + 1)^{-1}, reweighted interacting
expectations with mollifier and volume cutoffs, linear constraints by
projection and by penalty, and verifiers for reflection positivity,
Euclidean invariance, and the Markov property.
"""

__version__ = "1.0.0"

from .errors import (ConfigError, DegenerateWeightsError, QuadratureError, RpgaussError,
                     SampleBudgetError, SeparationError, SolverError, SupportError)
from .lattice import LatticeField, LatticeSpec, build_lattice

__all__ = [
    "__version__",
    "RpgaussError", "ConfigError", "SupportError", "QuadratureError",
    "DegenerateWeightsError", "SolverError", "SampleBudgetError", "SeparationError",
    "LatticeSpec", "LatticeField", "build_lattice",
]
