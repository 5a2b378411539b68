"""Multilevel Monte Carlo for elliptic problems with log-normal coefficients."""

from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    InputError,
    InsufficientDataError,
    MlmcError,
    NumericalError,
    ResourceError,
    SPDViolationError,
)
from .fem import assemble, solve_cg
from .mesh import build_hierarchy, structured_mesh
from .mlmc import (
    LevelStats,
    MlmcConfig,
    Problem,
    estimate_rates,
    optimal_allocation,
    run_mc,
    run_mlmc,
    theoretical_cost_exponent,
    y_sample,
)
from .qoi import QoIKind, QoISpec
from .random_field import CoefficientKind, CoefficientModel, CovarianceKind, CovarianceSpec

__version__ = "0.1.0"
