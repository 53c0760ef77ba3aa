"""Market and mortality parameters, and the quadratic roots used everywhere.

The investor earns r on cash, mu (> r) on the risky asset with volatility
sigma, and dies at an independent exponential time with rate beta.  Every
closed form downstream is built from

    gamma = ((mu - r) / sigma)^2 / 2

and the two real roots of

    gamma * lam^2 - (r - beta - gamma) * lam - r = 0,

which satisfy lam_minus < -1 < 0 < lam_plus because the product of the roots
is -r/gamma < 0 and the quadratic is negative at lam = -1 (its value there is
-beta).  The shifted roots rho = 1 + lam solve

    gamma * rho^2 - (r - beta + gamma) * rho - beta = 0,

so rho_minus < 0 < 1 < rho_plus and rho_plus * rho_minus = -beta/gamma.  The
shifted quadratic is exactly what makes y -> y**rho a solution of the ruin
equation beta*f = -(r - beta)*y*f' + gamma*y^2*f''; see ruin.py.  We therefore
always compute rho as 1 + lam and never solve a second quadratic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ParameterError

__all__ = ["MarketParams", "RootSet", "validate_params", "derive_roots"]


@dataclass(frozen=True)
class MarketParams:
    """Riskless rate, risky drift and volatility, and mortality hazard."""

    r: float
    mu: float
    sigma: float
    beta: float

    def validated(self) -> "MarketParams":
        return validate_params(self)


@dataclass(frozen=True)
class RootSet:
    """gamma plus the characteristic roots lam_-, lam_+ and rho = 1 + lam."""

    gamma: float
    lambda_minus: float
    lambda_plus: float
    rho_minus: float
    rho_plus: float

    @property
    def lambda_spread(self) -> float:
        return self.lambda_plus - self.lambda_minus


def validate_params(params: MarketParams) -> MarketParams:
    """Return ``params`` unchanged or raise ParameterError.

    Requires finite values with r > 0, sigma > 0, beta > 0 and mu > r.  The
    strict excess return keeps gamma positive; without it the dual change of
    variable degenerates.
    """
    for name in ("r", "mu", "sigma", "beta"):
        v = getattr(params, name)
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ParameterError(f"{name} must be a finite number, got {v!r}")
    if params.r <= 0.0:
        raise ParameterError(f"r must be positive, got {params.r}")
    if params.sigma <= 0.0:
        raise ParameterError(f"sigma must be positive, got {params.sigma}")
    if params.beta <= 0.0:
        raise ParameterError(f"beta must be positive, got {params.beta}")
    if params.mu <= params.r:
        raise ParameterError(
            f"mu must exceed r, got mu={params.mu} with r={params.r}"
        )
    return params


def derive_roots(params: MarketParams) -> RootSet:
    """Solve the characteristic quadratic for the validated parameters.

    Uses the numerically stable form q = -(b + sign(b)*sqrt(b^2 - 4ac)) / 2
    with roots q/a and c/q, which avoids cancellation when the roots differ
    by orders of magnitude.
    """
    validate_params(params)
    excess = (params.mu - params.r) / params.sigma
    gamma = 0.5 * excess * excess

    a = gamma
    b = -(params.r - params.beta - gamma)
    c = -params.r
    disc = b * b - 4.0 * a * c
    # c/a = -r/gamma < 0 so the discriminant is strictly positive.
    sqrt_disc = math.sqrt(disc)
    if b >= 0.0:
        q = -(b + sqrt_disc) / 2.0
    else:
        q = -(b - sqrt_disc) / 2.0
    lam_1 = q / a
    lam_2 = c / q
    lam_minus, lam_plus = (lam_1, lam_2) if lam_1 < lam_2 else (lam_2, lam_1)

    return RootSet(
        gamma=gamma,
        lambda_minus=lam_minus,
        lambda_plus=lam_plus,
        rho_minus=1.0 + lam_minus,
        rho_plus=1.0 + lam_plus,
    )
