"""Numerics lab for the stochastic p-Laplace equation with a nonlinear flux.

Finite-volume space discretization, a semi-implicit Euler scheme with a
Newton solver, rate-function estimation for small-noise large deviations,
and a coupling estimate for the quadratic transportation cost inequality.
"""

__version__ = "0.1.0"

from .errors import ConfigError, SolverError
from .grid import Grid, build_grid
from .stepper import ModelParams, run_girsanov, run_sde, run_skeleton

__all__ = [
    "ConfigError",
    "SolverError",
    "Grid",
    "build_grid",
    "ModelParams",
    "run_sde",
    "run_skeleton",
    "run_girsanov",
    "__version__",
]
