"""Closed-form solver in the dual (marginal-value) variable.

The constrained consumption problem is solved by maximizing

    E^x[ integral_0^tau0 e^(-beta t) U(c_t) dt + P e^(-beta tau0) ]

for a bankruptcy penalty P <= 0, where tau0 is the ruin time.  The value
function V is recovered from two kernels of the dual variable y = V'(x):

    wealth_of_dual(y)  (strictly decreasing; its inverse maps wealth to y)
    value_of_dual(y)   (V(x) = value_of_dual(dual_of_wealth(x)))

Both kernels are linear combinations of y-powers at the characteristic roots
times the marginal-utility kernel integrals

    Kp(lo, hi) = integral dtheta / U'(theta)^lam_plus
    Km(lo, hi) = integral dtheta / U'(theta)^lam_minus

with explicit coefficients:

    wealth_of_dual(y) = B y^lam+ + I(y)/r
        - (1/(gamma dl)) [ (y^lam+/lam+) Kp(a, I(y))
                         + (y^lam-/lam-) Km(I(y), inf) ]

    value_of_dual(y)  = A y^rho+ + U(I(y))/beta
        - (1/(gamma dl)) [ (y^rho+/rho+) Kp(a, I(y))
                         + (y^rho-/rho-) Km(I(y), inf) ]

where dl = lam+ - lam-, I is the inverse marginal (zero above U'(0)), a >= 0
is the consumption floor at bankruptcy and B <= 0, A = (lam+/rho+) B are the
homogeneous coefficients.  Because rho = 1 + lam and rho+ rho- = -beta/gamma,
the I'(y) terms cancel in d/dy of both kernels, giving the closed-form slope
used for the investment policy, and d(value)/dy = y * d(wealth)/dy, which is
exactly the envelope identity V'(x) = y.

The pair (a, B) depends on where the penalty P sits relative to U(0)/beta
and to the threshold from `penalty_threshold`; `solve_coefficients` performs
that case split.  See the SolutionCase docstring for the regime table.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

from .errors import ModelError, NumericalError, ParameterError
from .market import MarketParams, RootSet, derive_roots, validate_params
from .ruin import RuinCurve
from .utility import Utility, check_finiteness

__all__ = [
    "SolutionCase",
    "SolverTolerances",
    "DualCoefficients",
    "DualSolution",
    "penalty_threshold",
    "floor_equation",
    "solve_consumption_floor",
    "solve_wealth_coefficient",
    "solve_coefficients",
    "build_solution",
]


class SolutionCase(str, enum.Enum):
    """Coefficient regimes of the dual construction.

    I    ruin-free: P <= U(0)/beta, so bankruptcy is never worth it.  a = 0,
         B = 0, no upper endpoint (y_bar = inf) and zero ruin probability.
    II   unbounded marginal at zero (U'(0) = inf) with P above U(0)/beta:
         the bankruptcy consumption floor a > 0 solves `floor_equation`.
    III  finite U'(0) with P below `penalty_threshold`: consumption is
         exactly zero on a band [0, x_bar] of wealth; a = 0 and the endpoint
         y_bar > U'(0) has a closed form.
    IV   finite U'(0) with P equal to the threshold: the zero-consumption
         band collapses (y_bar = U'(0), x_bar = 0); a = 0.
    V    finite U'(0) with P above the threshold: as case II, the floor
         a > 0 solves `floor_equation`.
    """

    I = "i"
    II = "ii"
    III = "iii"
    IV = "iv"
    V = "v"


@dataclass(frozen=True)
class SolverTolerances:
    """Root-finding knobs; the defaults are the tested contract."""

    invert_rel: float = 1e-12        # relative bisection width on y
    invert_residual: float = 1e-10   # |wealth(y) - x| <= residual*(1+|x|)
    floor_rel: float = 1e-12         # relative bisection width on a
    floor_residual: float = 1e-10    # |F(a)| <= residual*(1+|rho+ P|)
    bracket_growth: float = 4.0
    max_bracket: int = 200
    max_bisect: int = 300


@dataclass(frozen=True)
class DualCoefficients:
    """Outputs of the case split: regime tag plus (P, a, B, A, y_bar, x_bar)."""

    case: SolutionCase
    penalty: float
    floor: float          # consumption approached at bankruptcy
    wealth_coef: float    # B, coefficient of y^lam+ in wealth_of_dual
    value_coef: float     # A = (lam+/rho+) B, coefficient of y^rho+
    y_bar: float          # dual variable at bankruptcy; inf in case I
    x_bar: float          # upper edge of the zero-consumption band (case III)


# --------------------------------------------------------------------------
# scalar helpers
# --------------------------------------------------------------------------


def _pow_term(coef_log_base: float, exponent: float, kernel_value: float) -> float:
    """kernel_value * base^exponent computed through logs.

    Avoids spurious overflow when base^exponent and kernel_value have huge
    opposite magnitudes.  kernel_value must be nonnegative; zero maps to
    zero.  coef_log_base is log(base).
    """
    if kernel_value == 0.0:
        return 0.0
    if math.isinf(kernel_value):
        return math.inf
    return math.exp(exponent * coef_log_base + math.log(kernel_value))


def penalty_threshold(utility: Utility, roots: RootSet, beta: float) -> float:
    """Penalty level separating the zero-consumption-band regime.

    Defined only for utilities with finite marginal at zero:

        U(0)/beta - (U'(0)^rho- / (beta lam-)) * Km(0, inf).

    Below this level the optimal plan spends nothing on a band of low wealth
    (case III); above it the bankruptcy consumption floor is positive.
    """
    du0 = utility.marginal_at_zero
    if math.isinf(du0):
        raise ParameterError(
            "the zero-consumption threshold requires a finite marginal at zero"
        )
    u0 = utility.value_at_zero
    km = utility.kernel(roots.lambda_minus, 0.0, math.inf)
    return u0 / beta - du0 ** roots.rho_minus * km / (beta * roots.lambda_minus)


def floor_equation(
    c: float,
    penalty: float,
    utility: Utility,
    roots: RootSet,
    market: MarketParams,
) -> float:
    """Strictly decreasing function of c whose root is the consumption floor.

    F(c) = rho+ P - (U'(c)^rho- / (gamma lam- rho-)) Km(c, inf)
         - (rho+/beta) U(c) + (lam+/r) c U'(c).

    F(0+) equals rho+ (P - penalty_threshold) when U'(0) is finite, and +inf
    when U(0) = -inf, so a positive root exists exactly in cases II and V.
    """
    if not (c > 0.0):
        raise ParameterError(f"floor equation needs c > 0, got {c}")
    du = utility.marginal(c)
    u = utility.value(c)
    km = utility.kernel(roots.lambda_minus, c, math.inf)
    term_km = _pow_term(math.log(du), roots.rho_minus, km)
    term_km /= roots.gamma * roots.lambda_minus * roots.rho_minus
    return (
        roots.rho_plus * penalty
        - term_km
        - roots.rho_plus / market.beta * u
        + roots.lambda_plus / market.r * c * du
    )


def solve_consumption_floor(
    penalty: float,
    utility: Utility,
    roots: RootSet,
    market: MarketParams,
    tol: SolverTolerances = SolverTolerances(),
) -> float:
    """Positive root of `floor_equation`, by geometric bracket plus bisection.

    The scan starts from I(1) (consumption worth one unit of marginal
    utility) and doubles outward; the root is polished to a relative width
    of tol.floor_rel and must satisfy the residual bound
    |F(a)| <= tol.floor_residual * (1 + |rho+ P|).
    """
    f = lambda c: floor_equation(c, penalty, utility, roots, market)

    c0 = utility.inverse_marginal(1.0)
    if not (c0 > 0.0) or not math.isfinite(c0):
        c0 = 1.0
    f0 = f(c0)
    if f0 > 0.0:
        lo = c0
        hi = c0
        for _ in range(tol.max_bracket):
            hi *= 2.0
            if f(hi) <= 0.0:
                break
            lo = hi
        else:
            raise NumericalError("failed to bracket the consumption floor from above")
    elif f0 < 0.0:
        hi = c0
        lo = c0
        for _ in range(tol.max_bracket):
            lo /= 2.0
            if f(lo) >= 0.0:
                break
            hi = lo
        else:
            raise NumericalError("failed to bracket the consumption floor from below")
    else:
        return c0

    for _ in range(tol.max_bisect):
        mid = math.sqrt(lo * hi)
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol.floor_rel * lo:
            break
    a = math.sqrt(lo * hi)
    scale = 1.0 + abs(roots.rho_plus * penalty)
    if abs(f(a)) > tol.floor_residual * scale:
        raise NumericalError(
            f"consumption floor residual {f(a):.3e} exceeds tolerance"
        )
    return a


def solve_wealth_coefficient(
    floor: float,
    utility: Utility,
    roots: RootSet,
    market: MarketParams,
) -> float:
    """Coefficient B that places bankruptcy (zero wealth) at y = U'(floor).

    Solves B U'(a)^lam+ + a/r - (U'(a)^lam- / (gamma lam- dl)) Km(a, inf) = 0
    for B, which makes wealth_of_dual(U'(a)) = 0 since Kp(a, a) = 0.  Used
    with the floor from `solve_consumption_floor` (cases II and V) or with
    floor = 0 when U'(0) is finite (case IV).
    """
    du = utility.marginal(floor) if floor > 0.0 else utility.marginal_at_zero
    if math.isinf(du):
        raise ParameterError("wealth coefficient needs a finite marginal at the floor")
    log_du = math.log(du)
    km = utility.kernel(roots.lambda_minus, floor, math.inf)
    dl = roots.lambda_spread
    term = _pow_term(log_du, roots.lambda_minus - roots.lambda_plus, km)
    term /= roots.gamma * roots.lambda_minus * dl
    if floor > 0.0:
        term -= floor / market.r * math.exp(-roots.lambda_plus * log_du)
    return term


def _band_endpoint(
    penalty: float,
    utility: Utility,
    roots: RootSet,
    market: MarketParams,
) -> tuple[float, float]:
    """Closed-form (B, y_bar) for the zero-consumption-band regime.

    With excess = P - U(0)/beta > 0,

        y_bar^rho- = -beta lam- excess / Km(0, inf)
        B = -beta excess / (gamma dl y_bar^rho+),

    which makes wealth_of_dual(y_bar) = 0 and keeps the kernel continuous
    across y = U'(0).
    """
    u0 = utility.value_at_zero
    excess = penalty - u0 / market.beta
    km0 = utility.kernel(roots.lambda_minus, 0.0, math.inf)
    rhs = -market.beta * roots.lambda_minus * excess / km0
    y_bar = rhs ** (1.0 / roots.rho_minus)
    b = -market.beta * excess / (roots.gamma * roots.lambda_spread) * math.exp(
        -roots.rho_plus * math.log(y_bar)
    )
    return b, y_bar


def solve_coefficients(
    penalty: float,
    utility: Utility,
    roots: RootSet,
    market: MarketParams,
    tol: SolverTolerances = SolverTolerances(),
) -> DualCoefficients:
    """Case split over the penalty level; see SolutionCase for the table."""
    if not math.isfinite(penalty):
        raise ParameterError(f"penalty must be finite, got {penalty}")
    if not check_finiteness(utility, roots):
        raise ModelError(
            "the minus-branch kernel integral diverges for this utility and "
            "market; the model is ill-posed"
        )

    u0 = utility.value_at_zero
    du0 = utility.marginal_at_zero
    u_top = utility.value_limit_inf
    if math.isfinite(u_top) and penalty >= u_top / market.beta:
        raise ModelError(
            "no continuous optimal plan exists: the bankruptcy payoff matches "
            "or beats every consumption stream (consume everything at once)"
        )

    if math.isfinite(u0) and penalty <= u0 / market.beta:
        return DualCoefficients(
            case=SolutionCase.I,
            penalty=penalty,
            floor=0.0,
            wealth_coef=0.0,
            value_coef=0.0,
            y_bar=math.inf,
            x_bar=0.0,
        )

    if math.isinf(du0):
        a = solve_consumption_floor(penalty, utility, roots, market, tol)
        b = solve_wealth_coefficient(a, utility, roots, market)
        return DualCoefficients(
            case=SolutionCase.II,
            penalty=penalty,
            floor=a,
            wealth_coef=b,
            value_coef=roots.lambda_plus / roots.rho_plus * b,
            y_bar=utility.marginal(a),
            x_bar=0.0,
        )

    p_star = penalty_threshold(utility, roots, market.beta)
    tol_star = 1e-12 * (1.0 + abs(p_star))
    if abs(penalty - p_star) <= tol_star:
        b = solve_wealth_coefficient(0.0, utility, roots, market)
        return DualCoefficients(
            case=SolutionCase.IV,
            penalty=penalty,
            floor=0.0,
            wealth_coef=b,
            value_coef=roots.lambda_plus / roots.rho_plus * b,
            y_bar=du0,
            x_bar=0.0,
        )
    if penalty < p_star:
        b, y_bar = _band_endpoint(penalty, utility, roots, market)
        coeffs = DualCoefficients(
            case=SolutionCase.III,
            penalty=penalty,
            floor=0.0,
            wealth_coef=b,
            value_coef=roots.lambda_plus / roots.rho_plus * b,
            y_bar=y_bar,
            x_bar=0.0,
        )
        x_bar = _wealth_of_dual(du0, coeffs, utility, roots, market)
        return replace(coeffs, x_bar=x_bar)

    a = solve_consumption_floor(penalty, utility, roots, market, tol)
    b = solve_wealth_coefficient(a, utility, roots, market)
    return DualCoefficients(
        case=SolutionCase.V,
        penalty=penalty,
        floor=a,
        wealth_coef=b,
        value_coef=roots.lambda_plus / roots.rho_plus * b,
        y_bar=utility.marginal(a),
        x_bar=0.0,
    )


# --------------------------------------------------------------------------
# kernel evaluation
# --------------------------------------------------------------------------


def _check_dual_domain(y: float, coeffs: DualCoefficients) -> float:
    if not (y > 0.0):
        raise ParameterError(f"dual variable must be positive, got {y}")
    y_bar = coeffs.y_bar
    if y > y_bar:
        # Tolerate inversion round-off at the endpoint, nothing more.
        if y <= y_bar * (1.0 + 1e-12):
            return y_bar
        raise ParameterError(
            f"dual variable {y} lies above the bankruptcy endpoint {y_bar}"
        )
    return y


def _wealth_of_dual(
    y: float,
    coeffs: DualCoefficients,
    utility: Utility,
    roots: RootSet,
    market: MarketParams,
) -> float:
    y = _check_dual_domain(y, coeffs)
    i_y = utility.inverse_marginal(y)
    log_y = math.log(y)
    kp = utility.kernel(roots.lambda_plus, coeffs.floor, i_y)
    km = utility.kernel(roots.lambda_minus, i_y, math.inf)
    dl = roots.lambda_spread
    bracket = (
        _pow_term(log_y, roots.lambda_plus, kp) / roots.lambda_plus
        + _pow_term(log_y, roots.lambda_minus, km) / roots.lambda_minus
    )
    x = coeffs.wealth_coef * math.exp(roots.lambda_plus * log_y)
    x += i_y / market.r
    x -= bracket / (roots.gamma * dl)
    return x


def _wealth_slope(
    y: float,
    coeffs: DualCoefficients,
    utility: Utility,
    roots: RootSet,
    market: MarketParams,
) -> float:
    """d(wealth_of_dual)/dy; the inverse-marginal terms cancel exactly."""
    y = _check_dual_domain(y, coeffs)
    i_y = utility.inverse_marginal(y)
    log_y = math.log(y)
    kp = utility.kernel(roots.lambda_plus, coeffs.floor, i_y)
    km = utility.kernel(roots.lambda_minus, i_y, math.inf)
    dl = roots.lambda_spread
    slope = coeffs.wealth_coef * roots.lambda_plus * math.exp(
        (roots.lambda_plus - 1.0) * log_y
    )
    slope -= (
        _pow_term(log_y, roots.lambda_plus - 1.0, kp)
        + _pow_term(log_y, roots.lambda_minus - 1.0, km)
    ) / (roots.gamma * dl)
    return slope


def _value_of_dual(
    y: float,
    coeffs: DualCoefficients,
    utility: Utility,
    roots: RootSet,
    market: MarketParams,
) -> float:
    y = _check_dual_domain(y, coeffs)
    i_y = utility.inverse_marginal(y)
    log_y = math.log(y)
    kp = utility.kernel(roots.lambda_plus, coeffs.floor, i_y)
    km = utility.kernel(roots.lambda_minus, i_y, math.inf)
    dl = roots.lambda_spread
    bracket = (
        _pow_term(log_y, roots.rho_plus, kp) / roots.rho_plus
        + _pow_term(log_y, roots.rho_minus, km) / roots.rho_minus
    )
    v = coeffs.value_coef * math.exp(roots.rho_plus * log_y)
    v += utility.value(i_y) / market.beta
    v -= bracket / (roots.gamma * dl)
    return v


# --------------------------------------------------------------------------
# assembled solution
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DualSolution:
    """Evaluators for one solved instance (market, utility, penalty)."""

    market: MarketParams
    roots: RootSet
    utility: Utility
    coeffs: DualCoefficients
    tol: SolverTolerances = field(default_factory=SolverTolerances)

    # -- dual-side evaluators ------------------------------------------------

    def wealth_of_dual(self, y: float) -> float:
        return _wealth_of_dual(y, self.coeffs, self.utility, self.roots, self.market)

    def wealth_slope(self, y: float) -> float:
        return _wealth_slope(y, self.coeffs, self.utility, self.roots, self.market)

    def value_of_dual(self, y: float) -> float:
        return _value_of_dual(y, self.coeffs, self.utility, self.roots, self.market)

    # -- inversion -------------------------------------------------------------

    def dual_of_wealth(self, x: float) -> float:
        """Inverse of wealth_of_dual, by geometric bracketing and bisection.

        Returns inf at x = 0 in the ruin-free regime (the dual variable
        diverges there); raises for x < 0.
        """
        if not (x >= 0.0):
            raise ParameterError(f"wealth must be nonnegative, got {x}")
        tol = self.tol
        y_bar = self.coeffs.y_bar
        if x == 0.0:
            if math.isinf(y_bar):
                return math.inf
            return y_bar

        if math.isfinite(y_bar):
            hi = y_bar
        else:
            hi = 1.0
            for _ in range(tol.max_bracket):
                if self.wealth_of_dual(hi) <= x:
                    break
                hi *= tol.bracket_growth
            else:
                raise NumericalError("failed to bracket the dual variable from above")
        lo = hi / tol.bracket_growth
        for _ in range(tol.max_bracket):
            if self.wealth_of_dual(lo) >= x:
                break
            lo /= tol.bracket_growth
        else:
            raise NumericalError("failed to bracket the dual variable from below")

        bound = tol.invert_residual * (1.0 + abs(x))
        y = math.sqrt(lo * hi)
        best = abs(self.wealth_of_dual(y) - x)
        for _ in range(tol.max_bisect):
            mid = math.sqrt(lo * hi)
            if mid <= lo or mid >= hi:
                break  # interval at float resolution
            w = self.wealth_of_dual(mid)
            if abs(w - x) < best:
                y, best = mid, abs(w - x)
            if w > x:
                lo = mid
            elif w < x:
                hi = mid
            else:
                return mid
            # the width tolerance alone is not enough where the transform is
            # steep; keep halving until the posted residual holds too
            if hi - lo <= tol.invert_rel * lo and best <= bound:
                break
        if best > bound:
            raise NumericalError(
                f"dual inversion residual too large at x={x:g}"
            )
        return y

    # -- primal-side evaluators -------------------------------------------

    def value(self, x: float) -> float:
        if x == 0.0:
            if self.coeffs.case is SolutionCase.I:
                return self.utility.value_at_zero / self.market.beta
            return self.coeffs.penalty
        return self.value_of_dual(self.dual_of_wealth(x))

    def consumption(self, x: float) -> float:
        if x == 0.0:
            if self.coeffs.case is SolutionCase.I:
                return 0.0
            return self.utility.inverse_marginal(self.coeffs.y_bar)
        return self.utility.inverse_marginal(self.dual_of_wealth(x))

    def investment(self, x: float) -> float:
        """Optimal risky holding -((mu-r)/sigma^2) y dX/dy, from the
        analytic slope (never a numerical second derivative)."""
        lever = (self.market.mu - self.market.r) / self.market.sigma**2
        if x == 0.0:
            if self.coeffs.case is SolutionCase.I:
                return 0.0
            y = self.coeffs.y_bar
        else:
            y = self.dual_of_wealth(x)
        return -lever * y * self.wealth_slope(y)

    def policy(self, x: float) -> tuple[float, float]:
        """(consumption, risky investment) at wealth x."""
        if x == 0.0:
            return self.consumption(0.0), self.investment(0.0)
        y = self.dual_of_wealth(x)
        lever = (self.market.mu - self.market.r) / self.market.sigma**2
        return (
            self.utility.inverse_marginal(y),
            -lever * y * self.wealth_slope(y),
        )

    def hjb_residual(self, x: float) -> float:
        """beta V - (r x - c) y - U(c) + gamma y^2 dX/dy at y = V'(x).

        Zero (to round-off) exactly when the dynamic-programming equation
        holds with V''(x) = 1 / wealth_slope(y).
        """
        if not (x > 0.0):
            raise ParameterError("the interior equation is evaluated at x > 0")
        y = self.dual_of_wealth(x)
        c = self.utility.inverse_marginal(y)
        v = self.value_of_dual(y)
        res = self.market.beta * v
        res -= (self.market.r * x - c) * y
        res -= self.utility.value(c)
        res += self.roots.gamma * y * y * self.wealth_slope(y)
        return res

    # -- ruin ------------------------------------------------------------------

    def ruin_curve(self) -> RuinCurve:
        return RuinCurve(
            rho_plus=self.roots.rho_plus,
            y_bar=self.coeffs.y_bar,
            penalty=self.coeffs.penalty,
        )

    def ruin_probability(self, x: float) -> float:
        """Probability of ruin before death under the optimal plan."""
        if math.isinf(self.coeffs.y_bar):
            if not (x >= 0.0):
                raise ParameterError(f"wealth must be nonnegative, got {x}")
            return 0.0
        if x == 0.0:
            return 1.0
        return self.ruin_curve().prob_of_dual(self.dual_of_wealth(x))


def build_solution(
    penalty: float,
    utility: Utility,
    market: MarketParams,
    tol: SolverTolerances = SolverTolerances(),
) -> DualSolution:
    """Validate inputs, derive roots, run the case split, bundle evaluators."""
    validate_params(market)
    roots = derive_roots(market)
    coeffs = solve_coefficients(penalty, utility, roots, market, tol)
    return DualSolution(
        market=market, roots=roots, utility=utility, coeffs=coeffs, tol=tol
    )
