"""Monte Carlo verification of the closed-form solution.

Two independent routes:

  * simulate_primal: Euler steps of the controlled wealth process under a
    feedback policy, with per-path exponential mortality, an absorbing
    barrier at zero wealth (linear-interpolation crossing refinement), and
    two utility accumulators that estimate the same quantity two ways: the
    raw integral up to the earlier of ruin and death, and the
    mortality-discounted integral up to ruin.  Their agreement is a free
    statistical test of the independence argument they rely on.

  * simulate_dual: exact log-normal steps of the dual geometric Brownian
    motion with a Brownian-bridge first-passage test, estimating the
    discounted passage value E[e^(-beta tau)], which is the ruin
    probability of the optimal plan.

Both are deterministic for a fixed (seed, config) regardless of the thread
count; see _kernels for the stream layout.  RUINBOUND_THREADS caps the
worker count (default: the numba thread pool size).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .dual import DualSolution
from .errors import ParameterError
from .market import MarketParams, RootSet, validate_params
from .utility import Utility

__all__ = [
    "SimConfig",
    "SimEstimate",
    "PolicyTable",
    "make_policy_table",
    "tabulate_policy",
    "simulate_primal",
    "simulate_dual",
    "active_threads",
]

# Truncation point of the discounted accumulators when t_max is not given:
# e^(-beta t_max) = HORIZON_WEIGHT, so the truncation bias is bounded by
# HORIZON_WEIGHT times the utility scale, below statistical error at the
# default path count.  Paths alive at t_max count as non-ruined.
HORIZON_WEIGHT = 1e-6


def active_threads() -> int:
    """Worker count: RUINBOUND_THREADS clamped to the numba pool size."""
    import numba

    cap = int(numba.config.NUMBA_NUM_THREADS)
    raw = os.environ.get("RUINBOUND_THREADS")
    if raw is None or raw.strip() == "":
        return cap
    try:
        n = int(raw)
    except ValueError:
        raise ParameterError(
            f"RUINBOUND_THREADS must be an integer, got {raw!r}"
        ) from None
    return min(max(n, 1), cap)


def _engage_threads() -> None:
    import numba

    numba.set_num_threads(active_threads())


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    dt: float = 1e-3
    t_max: float | None = None  # None: horizon where the discount hits 1e-6
    seed: int = 0
    antithetic: bool = True

    def validated(self) -> "SimConfig":
        if self.n_paths < 1:
            raise ParameterError(f"n_paths must be at least 1, got {self.n_paths}")
        if self.antithetic and self.n_paths % 2 != 0:
            raise ParameterError(
                f"n_paths must be even with antithetic pairing, got {self.n_paths}"
            )
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if self.t_max is not None and not (
            math.isfinite(self.t_max) and self.t_max > 0.0
        ):
            raise ParameterError(f"t_max must be positive, got {self.t_max}")
        return self

    def horizon(self, beta: float) -> float:
        if self.t_max is not None:
            return self.t_max
        return -math.log(HORIZON_WEIGHT) / beta


@dataclass(frozen=True)
class SimEstimate:
    """Estimates with standard errors; dual runs fill the ruin fields only."""

    ruin_prob: float
    ruin_se: float
    utility_mean: float = 0.0
    utility_se: float = 0.0
    utility_discounted_mean: float = 0.0
    utility_discounted_se: float = 0.0
    penalized_value: float = 0.0
    penalized_se: float = 0.0
    n_effective: int = 0


@dataclass(frozen=True)
class PolicyTable:
    """Feedback rules tabulated for O(1) lookup inside the kernels.

    wealth[0] must be the x = 0 boundary node; wealth[1:] a log-uniform
    grid.  Lookups interpolate linearly and extrapolate the last segment.
    """

    wealth: np.ndarray
    consumption: np.ndarray
    investment: np.ndarray
    utility_flow: np.ndarray

    def validated(self) -> "PolicyTable":
        n = self.wealth.shape[0]
        if n < 3:
            raise ParameterError("policy table needs at least 3 nodes")
        for arr in (self.consumption, self.investment, self.utility_flow):
            if arr.shape[0] != n:
                raise ParameterError("policy table columns must have equal length")
        if self.wealth[0] != 0.0:
            raise ParameterError("policy table must start at the x = 0 node")
        if not np.all(np.diff(self.wealth) > 0.0):
            raise ParameterError("policy table wealth grid must be increasing")
        if not (
            np.all(np.isfinite(self.consumption))
            and np.all(np.isfinite(self.investment))
            and np.all(np.isfinite(self.utility_flow))
        ):
            raise ParameterError("policy table values must be finite")
        return self


def _grid(anchor: float, n_nodes: int, span: float) -> np.ndarray:
    xs = np.empty(n_nodes + 1)
    xs[0] = 0.0
    xs[1:] = np.geomspace(anchor / span, anchor * span, n_nodes)
    return xs


def make_policy_table(
    solution: DualSolution,
    anchor: float,
    n_nodes: int = 4097,
    span: float = 1e8,
) -> PolicyTable:
    """Tabulate the optimal feedback rules around a wealth anchor.

    The grid spans [anchor/span, anchor*span]; excursions beyond it are
    handled by linear extrapolation, which is exact in the asymptotically
    linear regime the optimal rules approach for large wealth.
    """
    if not (math.isfinite(anchor) and anchor > 0.0):
        raise ParameterError(f"anchor wealth must be positive, got {anchor}")
    xs = _grid(anchor, n_nodes, span)
    cs = np.empty_like(xs)
    ps = np.empty_like(xs)
    us = np.empty_like(xs)
    for i, x in enumerate(xs):
        c, p = solution.policy(float(x))
        cs[i] = c
        ps[i] = p
        us[i] = solution.utility.value(c)
    return PolicyTable(xs, cs, ps, us).validated()


def tabulate_policy(
    consumption: Callable[[float], float],
    investment: Callable[[float], float],
    anchor: float,
    utility: Utility | None = None,
    n_nodes: int = 4097,
    span: float = 1e8,
) -> PolicyTable:
    """Tabulate arbitrary feedback rules; without a utility the flow is 0."""
    if not (math.isfinite(anchor) and anchor > 0.0):
        raise ParameterError(f"anchor wealth must be positive, got {anchor}")
    xs = _grid(anchor, n_nodes, span)
    cs = np.empty_like(xs)
    ps = np.empty_like(xs)
    us = np.empty_like(xs)
    for i, x in enumerate(xs):
        c = float(consumption(float(x)))
        cs[i] = c
        ps[i] = float(investment(float(x)))
        us[i] = utility.value(c) if utility is not None else 0.0
    return PolicyTable(xs, cs, ps, us).validated()


def _stats(values: np.ndarray, antithetic: bool) -> tuple[float, float]:
    """(mean, standard error); antithetic pairs are one sample each."""
    n = values.shape[0]
    mean = float(np.sum(values) / n)
    if antithetic and n >= 2:
        samples = 0.5 * (values[0::2] + values[1::2])
    else:
        samples = values
    m = samples.shape[0]
    if m < 2:
        return mean, 0.0
    var = float(np.sum((samples - mean) ** 2)) / (m * (m - 1))
    return mean, math.sqrt(max(var, 0.0))


def _seed64(seed: int) -> np.uint64:
    return np.uint64(seed & 0xFFFFFFFFFFFFFFFF)


def simulate_primal(
    policy: DualSolution | PolicyTable | tuple,
    x0: float,
    market: MarketParams,
    config: SimConfig = SimConfig(),
    utility: Utility | None = None,
    penalty: float | None = None,
) -> SimEstimate:
    """Euler simulation of the controlled wealth process.

    policy may be a solved instance (tabulated automatically; its utility
    and penalty are used), a prebuilt PolicyTable, or a (consumption,
    investment) pair of callables.  The penalty enters only the penalized
    objective estimate.
    """
    validate_params(market)
    config = config.validated()
    if not (math.isfinite(x0) and x0 > 0.0):
        raise ParameterError(f"initial wealth must be positive, got {x0}")

    if isinstance(policy, DualSolution):
        table = make_policy_table(policy, x0)
        if penalty is None:
            penalty = policy.coeffs.penalty
    elif isinstance(policy, PolicyTable):
        table = policy.validated()
    else:
        c_fn, pi_fn = policy
        table = tabulate_policy(c_fn, pi_fn, x0, utility=utility)
    if penalty is None:
        penalty = 0.0

    t_max = config.horizon(market.beta)
    n_steps = int(math.ceil(t_max / config.dt))
    n_paths = config.n_paths
    n_units = n_paths // 2 if config.antithetic else n_paths

    xs = np.ascontiguousarray(table.wealth, dtype=np.float64)
    cs = np.ascontiguousarray(table.consumption, dtype=np.float64)
    ps = np.ascontiguousarray(table.investment, dtype=np.float64)
    us = np.ascontiguousarray(table.utility_flow, dtype=np.float64)
    log_lo = math.log(xs[1])
    inv_dlog = (xs.shape[0] - 2) / (math.log(xs[-1]) - log_lo)

    out_ruined = np.empty(n_paths)
    out_raw = np.empty(n_paths)
    out_disc = np.empty(n_paths)
    out_ruin_disc = np.empty(n_paths)

    _engage_threads()
    _kernels.primal_kernel(
        _seed64(config.seed),
        n_units,
        config.antithetic,
        float(x0),
        market.r,
        market.mu - market.r,
        market.sigma,
        market.beta,
        config.dt,
        n_steps,
        xs,
        cs,
        ps,
        us,
        log_lo,
        inv_dlog,
        out_ruined,
        out_raw,
        out_disc,
        out_ruin_disc,
    )

    ruin_mean, ruin_se = _stats(out_ruined, config.antithetic)
    raw_mean, raw_se = _stats(out_raw, config.antithetic)
    disc_mean, disc_se = _stats(out_disc, config.antithetic)
    pen_mean, pen_se = _stats(out_disc + penalty * out_ruin_disc, config.antithetic)
    return SimEstimate(
        ruin_prob=ruin_mean,
        ruin_se=ruin_se,
        utility_mean=raw_mean,
        utility_se=raw_se,
        utility_discounted_mean=disc_mean,
        utility_discounted_se=disc_se,
        penalized_value=pen_mean,
        penalized_se=pen_se,
        n_effective=n_paths,
    )


def simulate_dual(
    y0: float,
    y_bar: float,
    market: MarketParams,
    roots: RootSet | None = None,
    config: SimConfig = SimConfig(),
) -> SimEstimate:
    """Discounted first-passage estimate for the dual GBM.

    Estimates E[e^(-beta tau)] for tau the first time the dual process,
    started at y0, reaches y_bar from below; that value equals the ruin
    probability of the optimal plan started at the matching wealth.
    """
    validate_params(market)
    config = config.validated()
    if not (0.0 < y0 < y_bar) or math.isinf(y_bar):
        raise ParameterError(
            f"dual start must satisfy 0 < y0 < y_bar < inf, got y0={y0}, "
            f"y_bar={y_bar}"
        )

    s = (market.mu - market.r) / market.sigma
    nu = -(market.r - market.beta) - 0.5 * s * s
    g0 = math.log(y_bar) - math.log(y0)
    t_max = config.horizon(market.beta)
    n_paths = config.n_paths
    n_units = n_paths // 2 if config.antithetic else n_paths

    out = np.empty(n_paths)
    _engage_threads()
    _kernels.dual_kernel(
        _seed64(config.seed),
        n_units,
        config.antithetic,
        g0,
        nu,
        s,
        market.beta,
        config.dt,
        t_max,
        out,
    )
    mean, se = _stats(out, config.antithetic)
    return SimEstimate(ruin_prob=mean, ruin_se=se, n_effective=n_paths)
