"""Optimal consumption and investment under a lifetime ruin constraint.

Closed-form solver for the penalized bankruptcy problem, penalty
calibration against a ruin-probability bound, and Monte Carlo
verification of both the primal and dual formulations.
"""

from .calibrate import (
    CalibrationRequest,
    CalibrationResult,
    calibrate_penalty,
    solve_constrained,
    unconstrained_ruin,
)
from .dual import (
    DualCoefficients,
    DualSolution,
    SolutionCase,
    SolverTolerances,
    build_solution,
    floor_equation,
    penalty_threshold,
    solve_coefficients,
    solve_consumption_floor,
    solve_wealth_coefficient,
)
from .errors import (
    ConfigError,
    ModelError,
    NumericalError,
    ParameterError,
    RuinboundError,
    SlackConstraintWarning,
)
from .market import MarketParams, RootSet, derive_roots, validate_params
from .ruin import RuinCurve, ruin_probability
from .utility import (
    LogUtility,
    PowerUtility,
    ShiftedPowerUtility,
    TabulatedUtility,
    Utility,
    check_finiteness,
    kernel_integral,
    make_utility,
)

__version__ = "0.1.0"

__all__ = [
    "CalibrationRequest",
    "CalibrationResult",
    "calibrate_penalty",
    "solve_constrained",
    "unconstrained_ruin",
    "DualCoefficients",
    "DualSolution",
    "SolutionCase",
    "SolverTolerances",
    "build_solution",
    "floor_equation",
    "penalty_threshold",
    "solve_coefficients",
    "solve_consumption_floor",
    "solve_wealth_coefficient",
    "ConfigError",
    "ModelError",
    "NumericalError",
    "ParameterError",
    "RuinboundError",
    "SlackConstraintWarning",
    "MarketParams",
    "RootSet",
    "derive_roots",
    "validate_params",
    "RuinCurve",
    "ruin_probability",
    "LogUtility",
    "PowerUtility",
    "ShiftedPowerUtility",
    "TabulatedUtility",
    "Utility",
    "check_finiteness",
    "kernel_integral",
    "make_utility",
    "__version__",
]
