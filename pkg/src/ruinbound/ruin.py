"""Ruin probability under the optimal plan.

Along the optimal wealth path the probability of hitting zero before the
exponential death time is a pure power of the dual variable:

    prob(x) = (y / y_bar)^rho+,   y = dual_of_wealth(x), y in (0, y_bar],

where y_bar is the dual variable at bankruptcy and rho+ > 0 the positive
shifted root.  The power solves the ordinary differential equation

    beta f(y) = -(r - beta) y f'(y) + gamma y^2 f''(y)

with f(y_bar) = 1 and f(0+) = 0, which is the dual form of the killed
hitting-probability equation.  In the ruin-free regime (y_bar = inf) the
probability is identically zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .errors import ParameterError

if TYPE_CHECKING:
    from .dual import DualSolution

__all__ = ["RuinCurve", "ruin_probability"]


@dataclass(frozen=True)
class RuinCurve:
    """Ruin probability as a function of the dual variable."""

    rho_plus: float
    y_bar: float
    penalty: float

    def prob_of_dual(self, y: float) -> float:
        """(y / y_bar)^rho+, evaluated through logs for small ratios."""
        if math.isinf(self.y_bar):
            if not (y >= 0.0):
                raise ParameterError(f"dual variable must be nonnegative, got {y}")
            return 0.0
        if y == 0.0:
            return 0.0
        if not (y > 0.0):
            raise ParameterError(f"dual variable must be nonnegative, got {y}")
        if y > self.y_bar:
            if y <= self.y_bar * (1.0 + 1e-12):
                return 1.0
            raise ParameterError(
                f"dual variable {y} lies above the bankruptcy endpoint {self.y_bar}"
            )
        return math.exp(self.rho_plus * (math.log(y) - math.log(self.y_bar)))


def ruin_probability(solution: "DualSolution", x: float) -> float:
    """Probability that the optimal plan hits zero wealth before death."""
    return solution.ruin_probability(x)
