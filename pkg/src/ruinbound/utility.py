"""Utility families and the marginal-utility kernel integrals.

Four families are supported.  Power utility U(c) = c^(1-p)/(1-p) and log
utility U(c) = ln(c) both have unbounded marginal utility at zero.  The
shifted power family

    U(c) = ((c + eta)^(1-p) - eta^(1-p)) / (1 - p) - K,   eta > 0, K >= 0,

has finite U(0) = -K and finite U'(0) = eta^(-p), which is what activates the
zero-consumption regimes of the solver.  Tabulated utilities supply U' on a
positive grid; the marginal is interpolated log-log piecewise linearly (so it
is a piecewise power law), U is recovered by quadrature from an anchor value
at the lowest grid point, and both tails continue the boundary segments'
power laws.  A tabulated marginal is therefore unbounded at zero.

Everything downstream consumes the utility through five quantities: U, U',
the inverse marginal I = (U')^(-1) (with I(y) = 0 for y >= U'(0)), and the
two kernel integrals

    K(lam; lo, hi) = integral_lo^hi  dtheta / U'(theta)^lam

evaluated at the characteristic roots lam_+ and lam_-.  The minus-branch
kernel with an infinite upper limit converges only when U' decays fast
enough; `check_finiteness` tests exactly that and callers must reject models
where it fails.
"""

from __future__ import annotations

import math
from typing import Literal, Sequence

import numpy as np
from scipy.integrate import quad

from .errors import ModelError, ParameterError
from .market import RootSet

__all__ = [
    "Utility",
    "PowerUtility",
    "LogUtility",
    "ShiftedPowerUtility",
    "TabulatedUtility",
    "make_utility",
    "kernel_integral",
    "check_finiteness",
]

_QUAD_EPSREL = 1e-11
_QUAD_LIMIT = 200


def _power_antiderivative(exponent: float, shift: float, theta: float) -> float:
    """Antiderivative of (theta + shift)^exponent, dropping the constant."""
    base = theta + shift
    if exponent == -1.0:
        return math.log(base)
    return base ** (exponent + 1.0) / (exponent + 1.0)


def _scaled_power_integral(exponent: float, s: float, t: float) -> float:
    """integral_s^t u^exponent du for 0 <= s < t <= inf; caller checks convergence."""
    p1 = exponent + 1.0
    if p1 == 0.0:
        return math.log(t / s)
    lo_term = 0.0 if s == 0.0 else s ** p1
    hi_term = 0.0 if math.isinf(t) else t ** p1
    return (hi_term - lo_term) / p1


def _power_kernel(exponent: float, shift: float, lo: float, hi: float) -> float:
    """integral_lo^hi (theta + shift)^exponent dtheta, extended-real valued.

    Raises ModelError when the integral diverges (at an infinite upper limit
    with exponent >= -1, or at lo + shift == 0 with exponent <= -1).
    """
    if hi == lo:
        return 0.0
    if math.isinf(hi):
        if exponent >= -1.0:
            raise ModelError(
                "kernel integral diverges at infinity "
                f"(integrand exponent {exponent:g} >= -1)"
            )
        return -_power_antiderivative(exponent, shift, lo)
    if lo + shift == 0.0 and exponent <= -1.0:
        raise ModelError(
            "kernel integral diverges at the lower endpoint "
            f"(integrand exponent {exponent:g} <= -1)"
        )
    return _power_antiderivative(exponent, shift, hi) - _power_antiderivative(
        exponent, shift, lo
    )


class Utility:
    """Interface shared by every utility family.

    Subclasses provide value/marginal/inverse_marginal plus the boundary
    quantities value_at_zero, marginal_at_zero and value_limit_inf, all in
    extended-real convention (math.inf / -math.inf rather than sentinels).
    """

    def value(self, c: float) -> float:
        raise NotImplementedError

    def marginal(self, c: float) -> float:
        raise NotImplementedError

    def inverse_marginal(self, y: float) -> float:
        raise NotImplementedError

    @property
    def value_at_zero(self) -> float:
        raise NotImplementedError

    @property
    def marginal_at_zero(self) -> float:
        raise NotImplementedError

    @property
    def value_limit_inf(self) -> float:
        """lim_{c -> inf} U(c)."""
        raise NotImplementedError

    def kernel(self, lam: float, lo: float, hi: float) -> float:
        """integral_lo^hi dtheta / U'(theta)^lam."""
        raise NotImplementedError

    def tail_kernel_converges(self, lam: float) -> bool:
        """True when integral^inf dtheta / U'(theta)^lam is finite."""
        raise NotImplementedError

    def _check_consumption(self, c: float) -> None:
        if not (c >= 0.0):
            raise ParameterError(f"consumption must be nonnegative, got {c}")

    def _check_dual(self, y: float) -> None:
        if not (y > 0.0):
            raise ParameterError(f"marginal utility level must be positive, got {y}")


class PowerUtility(Utility):
    """U(c) = c^(1-p) / (1-p) with p > 0, p != 1 (use LogUtility for p=1)."""

    def __init__(self, p: float):
        if not (p > 0.0) or not math.isfinite(p):
            raise ParameterError(f"power exponent p must be positive, got {p}")
        if p == 1.0:
            raise ParameterError("p = 1 is log utility; use the log family")
        self.p = float(p)

    def __repr__(self) -> str:
        return f"PowerUtility(p={self.p})"

    def value(self, c: float) -> float:
        self._check_consumption(c)
        if c == 0.0:
            return self.value_at_zero
        return c ** (1.0 - self.p) / (1.0 - self.p)

    def marginal(self, c: float) -> float:
        self._check_consumption(c)
        if c == 0.0:
            return math.inf
        return c ** (-self.p)

    def inverse_marginal(self, y: float) -> float:
        self._check_dual(y)
        return y ** (-1.0 / self.p)

    @property
    def value_at_zero(self) -> float:
        return 0.0 if self.p < 1.0 else -math.inf

    @property
    def marginal_at_zero(self) -> float:
        return math.inf

    @property
    def value_limit_inf(self) -> float:
        return math.inf if self.p < 1.0 else 0.0

    def kernel(self, lam: float, lo: float, hi: float) -> float:
        return _power_kernel(self.p * lam, 0.0, lo, hi)

    def tail_kernel_converges(self, lam: float) -> bool:
        return self.p * lam < -1.0


class LogUtility(Utility):
    """U(c) = ln(c)."""

    def __repr__(self) -> str:
        return "LogUtility()"

    def value(self, c: float) -> float:
        self._check_consumption(c)
        if c == 0.0:
            return -math.inf
        return math.log(c)

    def marginal(self, c: float) -> float:
        self._check_consumption(c)
        if c == 0.0:
            return math.inf
        return 1.0 / c

    def inverse_marginal(self, y: float) -> float:
        self._check_dual(y)
        return 1.0 / y

    @property
    def value_at_zero(self) -> float:
        return -math.inf

    @property
    def marginal_at_zero(self) -> float:
        return math.inf

    @property
    def value_limit_inf(self) -> float:
        return math.inf

    def kernel(self, lam: float, lo: float, hi: float) -> float:
        # U'(theta) = 1/theta, so the integrand is theta^lam.
        return _power_kernel(lam, 0.0, lo, hi)

    def tail_kernel_converges(self, lam: float) -> bool:
        return lam < -1.0


class ShiftedPowerUtility(Utility):
    """U(c) = ((c+eta)^(1-p) - eta^(1-p))/(1-p) - K, finite at zero.

    U(0) = -K and U'(0) = eta^(-p) are both finite, so the inverse marginal
    clips to zero for y >= eta^(-p).  p = 1 is handled as the continuous
    limit U(c) = ln((c+eta)/eta) - K.
    """

    def __init__(self, p: float, eta: float, bequest_offset: float = 0.0):
        if not (p > 0.0) or not math.isfinite(p):
            raise ParameterError(f"power exponent p must be positive, got {p}")
        if not (eta > 0.0) or not math.isfinite(eta):
            raise ParameterError(f"shift eta must be positive, got {eta}")
        if not (bequest_offset >= 0.0) or not math.isfinite(bequest_offset):
            raise ParameterError(
                f"offset K must be a finite nonnegative number, got {bequest_offset}"
            )
        self.p = float(p)
        self.eta = float(eta)
        self.offset = float(bequest_offset)

    def __repr__(self) -> str:
        return f"ShiftedPowerUtility(p={self.p}, eta={self.eta}, K={self.offset})"

    def value(self, c: float) -> float:
        self._check_consumption(c)
        if self.p == 1.0:
            return math.log((c + self.eta) / self.eta) - self.offset
        num = (c + self.eta) ** (1.0 - self.p) - self.eta ** (1.0 - self.p)
        return num / (1.0 - self.p) - self.offset

    def marginal(self, c: float) -> float:
        self._check_consumption(c)
        return (c + self.eta) ** (-self.p)

    def inverse_marginal(self, y: float) -> float:
        self._check_dual(y)
        if y >= self.marginal_at_zero:
            return 0.0
        return y ** (-1.0 / self.p) - self.eta

    @property
    def value_at_zero(self) -> float:
        return -self.offset

    @property
    def marginal_at_zero(self) -> float:
        return self.eta ** (-self.p)

    @property
    def value_limit_inf(self) -> float:
        if self.p <= 1.0:
            return math.inf
        return self.eta ** (1.0 - self.p) / (self.p - 1.0) - self.offset

    def kernel(self, lam: float, lo: float, hi: float) -> float:
        return _power_kernel(self.p * lam, self.eta, lo, hi)

    def tail_kernel_converges(self, lam: float) -> bool:
        return self.p * lam < -1.0


class TabulatedUtility(Utility):
    """Utility defined by a tabulated marginal on a positive grid.

    ``grid`` must be strictly increasing and positive; ``marginal_values``
    strictly decreasing and positive.  Between nodes the marginal is the
    power law through the two endpoints (linear in log-log coordinates);
    below the first node and above the last it continues the boundary
    segments' power laws, so U'(0+) = inf and U'(inf) = 0.  U is anchored at
    U(grid[0]) = anchor_value and recovered by adaptive quadrature of the
    interpolated marginal; kernel integrals are exact piecewise-power sums.
    """

    def __init__(
        self,
        grid: Sequence[float],
        marginal_values: Sequence[float],
        anchor_value: float = 0.0,
    ):
        c = np.asarray(grid, dtype=float)
        m = np.asarray(marginal_values, dtype=float)
        if c.ndim != 1 or m.shape != c.shape or c.size < 2:
            raise ParameterError(
                "tabulated utility needs matching 1-d grids with at least two points"
            )
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(m)):
            raise ParameterError("tabulated utility grids must be finite")
        if c[0] <= 0.0 or np.any(np.diff(c) <= 0.0):
            raise ParameterError("consumption grid must be positive and increasing")
        if m[-1] <= 0.0 or np.any(np.diff(m) >= 0.0):
            raise ParameterError("marginal values must be positive and decreasing")
        if not math.isfinite(anchor_value):
            raise ParameterError("anchor value must be finite")

        self.grid = c
        self.marginal_values = m
        self.anchor_value = float(anchor_value)
        self._log_c = np.log(c)
        self._log_m = np.log(m)
        # Per-segment power-law slopes d(log U')/d(log c); strictly negative.
        self._slopes = np.diff(self._log_m) / np.diff(self._log_c)
        self._slope_lo = float(self._slopes[0])
        self._slope_hi = float(self._slopes[-1])
        self._node_values: np.ndarray | None = None

    def __repr__(self) -> str:
        return f"TabulatedUtility(n={self.grid.size})"

    # -- marginal interpolation -------------------------------------------

    def _segment_slope(self, idx: int) -> float:
        return float(self._slopes[min(max(idx, 0), self._slopes.size - 1)])

    def marginal(self, c: float) -> float:
        self._check_consumption(c)
        if c == 0.0:
            return math.inf
        grid = self.grid
        if c <= grid[0]:
            return float(self.marginal_values[0] * (c / grid[0]) ** self._slope_lo)
        if c >= grid[-1]:
            return float(self.marginal_values[-1] * (c / grid[-1]) ** self._slope_hi)
        idx = int(np.searchsorted(grid, c, side="right")) - 1
        q = self._segment_slope(idx)
        return float(self.marginal_values[idx] * (c / grid[idx]) ** q)

    def inverse_marginal(self, y: float) -> float:
        self._check_dual(y)
        m = self.marginal_values
        if y >= m[0]:
            c = float(self.grid[0] * (y / m[0]) ** (1.0 / self._slope_lo))
        elif y <= m[-1]:
            c = float(self.grid[-1] * (y / m[-1]) ** (1.0 / self._slope_hi))
        else:
            # m is decreasing; locate the bracketing segment.
            idx = int(np.searchsorted(-m, -y, side="right")) - 1
            idx = min(max(idx, 0), m.size - 2)
            q = self._segment_slope(idx)
            c = float(self.grid[idx] * (y / m[idx]) ** (1.0 / q))
        if not math.isfinite(c) or abs(self.marginal(c) - y) > 1e-9 * y:
            c = self._invert_by_bisection(y)
        return c

    def _invert_by_bisection(self, y: float) -> float:
        lo, hi = float(self.grid[0]), float(self.grid[-1])
        for _ in range(200):
            if self.marginal(lo) >= y:
                break
            lo /= 4.0
        for _ in range(200):
            if self.marginal(hi) <= y:
                break
            hi *= 4.0
        for _ in range(300):
            mid = math.sqrt(lo * hi)
            if self.marginal(mid) > y:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-14 * lo:
                break
        return math.sqrt(lo * hi)

    # -- value reconstruction ----------------------------------------------

    def _node_cumulative(self) -> np.ndarray:
        if self._node_values is None:
            vals = np.empty(self.grid.size)
            vals[0] = self.anchor_value
            for i in range(self.grid.size - 1):
                seg, _ = quad(
                    self.marginal,
                    self.grid[i],
                    self.grid[i + 1],
                    epsabs=0.0,
                    epsrel=_QUAD_EPSREL,
                    limit=_QUAD_LIMIT,
                )
                vals[i + 1] = vals[i] + seg
            self._node_values = vals
        return self._node_values

    def value(self, c: float) -> float:
        self._check_consumption(c)
        if c == 0.0:
            return self.value_at_zero
        nodes = self._node_cumulative()
        grid = self.grid
        if c <= grid[0]:
            tail, _ = quad(
                self.marginal, c, grid[0], epsabs=0.0, epsrel=_QUAD_EPSREL,
                limit=_QUAD_LIMIT,
            )
            return float(nodes[0] - tail)
        if c >= grid[-1]:
            tail, _ = quad(
                self.marginal, grid[-1], c, epsabs=0.0, epsrel=_QUAD_EPSREL,
                limit=_QUAD_LIMIT,
            )
            return float(nodes[-1] + tail)
        idx = int(np.searchsorted(grid, c, side="right")) - 1
        seg, _ = quad(
            self.marginal, grid[idx], c, epsabs=0.0, epsrel=_QUAD_EPSREL,
            limit=_QUAD_LIMIT,
        )
        return float(nodes[idx] + seg)

    @property
    def value_at_zero(self) -> float:
        # Below the grid U' is the power law m0*(c/c0)^q with q < 0; the
        # integral over (0, c0] is finite only when q > -1.
        q = self._slope_lo
        if q <= -1.0:
            return -math.inf
        head = self.marginal_values[0] * self.grid[0] / (q + 1.0)
        return float(self.anchor_value - head)

    @property
    def marginal_at_zero(self) -> float:
        return math.inf

    @property
    def value_limit_inf(self) -> float:
        q = self._slope_hi
        if q >= -1.0:
            return math.inf
        tail = self.marginal_values[-1] * self.grid[-1] / (-q - 1.0)
        return float(self._node_cumulative()[-1] + tail)

    # -- kernels -------------------------------------------------------------

    def _interior_points(self, lo: float, hi: float) -> list[float]:
        return [float(c) for c in self.grid if lo < c < hi]

    def _piece_regime(self, a: float, b: float) -> tuple[float, float, float]:
        # Power-law parameters (reference point, marginal there, slope) valid
        # on the whole of (a, b); callers must pass node-free intervals.
        grid = self.grid
        if b <= grid[0]:
            return float(grid[0]), float(self.marginal_values[0]), self._slope_lo
        if a >= grid[-1]:
            return float(grid[-1]), float(self.marginal_values[-1]), self._slope_hi
        idx = int(np.searchsorted(grid, a, side="right")) - 1
        idx = min(max(idx, 0), grid.size - 2)
        return (
            float(grid[idx]),
            float(self.marginal_values[idx]),
            self._segment_slope(idx),
        )

    def kernel(self, lam: float, lo: float, hi: float) -> float:
        # The marginal is piecewise power, so the integral of U'(theta)^(-lam)
        # is an exact sum over the node-free pieces of (lo, hi).
        if math.isinf(hi) and not self.tail_kernel_converges(lam):
            raise ModelError(
                "kernel integral diverges at infinity for the tabulated marginal"
            )
        if hi == lo:
            return 0.0
        edges = [lo, *self._interior_points(lo, hi), hi]
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            ref, m_ref, q = self._piece_regime(a, b)
            exponent = -lam * q
            if a == 0.0 and exponent <= -1.0:
                raise ModelError(
                    "kernel integral diverges at the lower endpoint "
                    f"(integrand exponent {exponent:g} <= -1)"
                )
            # on (a, b): U'(theta)^(-lam) = m_ref^(-lam) (theta/ref)^exponent
            total += m_ref ** (-lam) * ref * _scaled_power_integral(
                exponent, a / ref, b / ref
            )
        return float(total)

    def tail_kernel_converges(self, lam: float) -> bool:
        # U' ~ c^q_hi at infinity, so the integrand behaves like c^(-lam*q_hi).
        return -lam * self._slope_hi < -1.0


def make_utility(kind: str, **kwargs) -> Utility:
    """Build a utility from config-style keyword arguments.

    Unknown or leftover options raise instead of being dropped.  The
    shifted_power offset is accepted as either K or bequest_offset.
    """
    kind = kind.lower()
    opts = dict(kwargs)

    def need(name: str):
        try:
            return opts.pop(name)
        except KeyError:
            raise ParameterError(
                f"utility kind {kind!r} requires option {name!r}"
            ) from None

    if kind == "power":
        built = PowerUtility(p=float(need("p")))
    elif kind == "log":
        built = LogUtility()
    elif kind == "shifted_power":
        if "K" in opts and "bequest_offset" in opts:
            raise ParameterError("pass either K or bequest_offset, not both")
        offset = opts.pop("K", opts.pop("bequest_offset", 0.0))
        opts.pop("bequest_offset", None)
        built = ShiftedPowerUtility(
            p=float(need("p")), eta=float(need("eta")), bequest_offset=float(offset)
        )
    elif kind == "custom":
        built = TabulatedUtility(
            grid=need("grid"),
            marginal_values=need("marginal_values"),
            anchor_value=float(opts.pop("anchor_value", 0.0)),
        )
    else:
        raise ParameterError(f"unknown utility kind {kind!r}")
    if opts:
        raise ParameterError(
            f"unused utility options for kind {kind!r}: {sorted(opts)}"
        )
    return built


def kernel_integral(
    utility: Utility,
    roots: RootSet,
    branch: Literal["plus", "minus"],
    lower: float,
    upper: float,
) -> float:
    """integral_lower^upper dtheta / U'(theta)^lam at the chosen root.

    ``branch`` selects lam_+ ("plus") or lam_- ("minus").  The bounds must
    satisfy 0 <= lower <= upper; ``upper`` may be math.inf.  Raises
    ModelError when the integral diverges.
    """
    if branch == "plus":
        lam = roots.lambda_plus
    elif branch == "minus":
        lam = roots.lambda_minus
    else:
        raise ParameterError(f"branch must be 'plus' or 'minus', got {branch!r}")
    if not (0.0 <= lower):
        raise ParameterError(f"lower bound must be nonnegative, got {lower}")
    if not (lower <= upper):
        raise ParameterError(f"bounds must be ordered, got [{lower}, {upper}]")
    return utility.kernel(lam, lower, upper)


def check_finiteness(utility: Utility, roots: RootSet) -> bool:
    """True when the minus-branch tail kernel is finite.

    Every closed form in the solver integrates 1/U'(theta)^lam_- out to
    infinity, so models failing this test must be rejected by the caller.
    Returns a bool rather than raising so callers can phrase their own error.
    """
    return utility.tail_kernel_converges(roots.lambda_minus)
