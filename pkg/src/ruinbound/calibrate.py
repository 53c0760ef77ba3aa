"""Penalty calibration: match the ruin-probability bound at a given wealth.

The constrained problem (maximize expected lifetime utility subject to a
bound on the probability of ruin before death) is solved by a bankruptcy
penalty P <= 0: the ruin probability of the penalized optimum is increasing
and continuous in P, so the P matching the bound is found by bisection on
[P_lo, 0].  The bound is enforced in probability space: the search stops
when |achieved - requested| <= ruin_tol, never on a P-width criterion.

Special endpoints:
  * bound >= unconstrained ruin probability: the constraint is slack; the
    unconstrained optimum (P = 0) is returned with binding=False and a
    SlackConstraintWarning (or ModelError when strict=True).
  * bound = 0 with finite U(0): P = U(0)/beta attains zero ruin exactly.
  * bound = 0 with U(0) = -inf: zero ruin is approached only as P -> -inf;
    reported as a bracket failure with guidance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .dual import DualSolution, build_solution, SolverTolerances
from .errors import ModelError, NumericalError, ParameterError, SlackConstraintWarning
from .market import MarketParams
from .utility import Utility

__all__ = [
    "CalibrationRequest",
    "CalibrationResult",
    "unconstrained_ruin",
    "calibrate_penalty",
    "solve_constrained",
]

# The downward bracket search P <- 2P has no closed-form stopping point when
# U(0) = -inf; cap it generously and fail loudly rather than spin.
MAX_DOUBLINGS = 10**6


@dataclass(frozen=True)
class CalibrationRequest:
    market: MarketParams
    utility: Utility
    wealth: float
    ruin_bound: float            # allowed probability of ruin before death
    ruin_tol: float = 1e-6       # stopping tolerance on the achieved probability
    max_iter: int = 200          # bisection cap
    strict: bool = False         # error instead of warn when the bound is slack
    solver_tol: SolverTolerances = SolverTolerances()

    def validated(self) -> "CalibrationRequest":
        if not (math.isfinite(self.wealth) and self.wealth > 0.0):
            raise ParameterError(f"wealth must be positive, got {self.wealth}")
        if not (0.0 <= self.ruin_bound <= 1.0):
            raise ParameterError(
                f"ruin bound must lie in [0, 1], got {self.ruin_bound}"
            )
        if not (self.ruin_tol > 0.0):
            raise ParameterError(f"ruin tolerance must be positive, got {self.ruin_tol}")
        if self.max_iter < 1:
            raise ParameterError(f"max_iter must be at least 1, got {self.max_iter}")
        return self


@dataclass(frozen=True)
class CalibrationResult:
    penalty: float
    solution: DualSolution
    achieved_ruin: float
    target_ruin: float
    iterations: int
    binding: bool
    converged: bool
    # (penalty, achieved ruin) pairs in evaluation order, for diagnostics.
    trace: tuple[tuple[float, float], ...] = ()


def unconstrained_ruin(request: CalibrationRequest) -> float:
    """Ruin probability of the unconstrained optimum (zero penalty).

    When the utility is bounded above by 0 (so the zero penalty already
    matches the value of consuming everything at once), the unconstrained
    plan degenerates and its ruin probability is the limit value 1.
    """
    request = request.validated()
    u_top = request.utility.value_limit_inf
    if math.isfinite(u_top) and 0.0 >= u_top / request.market.beta:
        return 1.0
    solution = build_solution(
        0.0, request.utility, request.market, request.solver_tol
    )
    return solution.ruin_probability(request.wealth)


def _solve(request: CalibrationRequest, penalty: float) -> tuple[DualSolution, float]:
    solution = build_solution(
        penalty, request.utility, request.market, request.solver_tol
    )
    return solution, solution.ruin_probability(request.wealth)


def calibrate_penalty(request: CalibrationRequest) -> CalibrationResult:
    """Bisection on the penalty until the ruin bound is met at request.wealth."""
    request = request.validated()
    phi = request.ruin_bound
    psi_free = unconstrained_ruin(request)

    if phi >= psi_free:
        if request.strict and phi > psi_free:
            raise ModelError(
                f"ruin bound {phi} exceeds the unconstrained ruin probability "
                f"{psi_free}; the constraint is slack"
            )
        if phi > psi_free:
            warnings.warn(
                f"ruin bound {phi} is not binding (unconstrained ruin "
                f"probability is {psi_free}); returning the unconstrained optimum",
                SlackConstraintWarning,
                stacklevel=2,
            )
        solution, achieved = _solve(request, 0.0)
        return CalibrationResult(
            penalty=0.0,
            solution=solution,
            achieved_ruin=achieved,
            target_ruin=phi,
            iterations=0,
            binding=False,
            converged=True,
        )

    u0 = request.utility.value_at_zero
    beta = request.market.beta

    if phi == 0.0:
        if math.isinf(u0):
            raise NumericalError(
                "cannot bracket a zero ruin bound: utilities unbounded below "
                "at zero reach it only as the penalty tends to -inf; request "
                "a small positive bound instead"
            )
        penalty = u0 / beta
        solution, achieved = _solve(request, penalty)
        return CalibrationResult(
            penalty=penalty,
            solution=solution,
            achieved_ruin=achieved,
            target_ruin=0.0,
            iterations=0,
            binding=True,
            converged=True,
            trace=((penalty, achieved),),
        )

    trace: list[tuple[float, float]] = []

    if math.isfinite(u0):
        p_lo = u0 / beta  # ruin probability is exactly 0 there
    else:
        p_lo = -1.0
        for _ in range(MAX_DOUBLINGS):
            if not math.isfinite(p_lo):
                raise NumericalError(
                    "penalty bracket search underflowed to -inf before the "
                    "ruin probability dropped below the bound"
                )
            _, psi_lo = _solve(request, p_lo)
            trace.append((p_lo, psi_lo))
            if psi_lo <= phi:
                break
            p_lo *= 2.0
        else:
            raise NumericalError(
                "penalty bracket search failed: the ruin probability stayed "
                f"above {phi} after {MAX_DOUBLINGS} doublings"
            )
    p_hi = 0.0  # ruin probability psi_free > phi there; never re-evaluated

    for iteration in range(1, request.max_iter + 1):
        p_mid = 0.5 * (p_lo + p_hi)
        solution, psi_mid = _solve(request, p_mid)
        trace.append((p_mid, psi_mid))
        if abs(psi_mid - phi) <= request.ruin_tol:
            return CalibrationResult(
                penalty=p_mid,
                solution=solution,
                achieved_ruin=psi_mid,
                target_ruin=phi,
                iterations=iteration,
                binding=True,
                converged=True,
                trace=tuple(trace),
            )
        if psi_mid > phi:
            p_hi = p_mid
        else:
            p_lo = p_mid
    raise NumericalError(
        f"penalty bisection did not reach |ruin - {phi}| <= {request.ruin_tol} "
        f"within {request.max_iter} iterations"
    )


def solve_constrained(request: CalibrationRequest) -> CalibrationResult:
    """Calibrate the penalty and return the result with its solution attached.

    The solution carries the value, consumption, investment and ruin
    evaluators at the calibrated penalty.
    """
    return calibrate_penalty(request)
