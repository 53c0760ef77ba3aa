"""Command-line front end.

    ruinbound <solve|policy|frontier|simulate|check> --config <path>
              [--out <path>] [--format json|csv] [--seed N]

Config files are UTF-8 text, one `key = value` per line, `#` starts a
comment line, dotted keys for nesting.  Recognized keys:

    market:     r, mu, sigma, beta
    utility:    utility.kind (power|log|shifted_power|custom),
                utility.p, utility.eta, utility.K, utility.grid_file
    problem:    wealth, phi
    numeric:    tol_phi, tol_root
    simulation: seed, n_paths, dt, t_max
    output:     format (json|csv), out_path

Unknown keys are rejected, as are utility.* keys the chosen kind does not
use.  utility.grid_file is resolved relative to the config file and must
hold two columns (consumption, marginal utility).

Exit codes: 0 success, 1 invalid config or arguments, 2 model-validity
failure, 3 numerical failure, 4 check-suite failure.

Output is byte-identical for identical config and seed.  Every emitted
number is finite; the y_bar field alone may carry the string "inf".
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .calibrate import (
    CalibrationRequest,
    CalibrationResult,
    calibrate_penalty,
    unconstrained_ruin,
)
from .dual import DualSolution, SolverTolerances, build_solution
from .errors import (
    ConfigError,
    ModelError,
    NumericalError,
    ParameterError,
    RuinboundError,
)
from .market import MarketParams, derive_roots
from .utility import TabulatedUtility, Utility, make_utility

__all__ = ["run", "console_entry", "parse_config", "RunConfig"]

_COMMANDS = ("solve", "policy", "frontier", "simulate", "check")

_MARKET_KEYS = ("r", "mu", "sigma", "beta")
_UTILITY_KEYS = {
    "power": {"utility.p"},
    "log": set(),
    "shifted_power": {"utility.p", "utility.eta", "utility.K"},
    "custom": {"utility.grid_file"},
}
_UTILITY_REQUIRED = {
    "power": {"utility.p"},
    "log": set(),
    "shifted_power": {"utility.p", "utility.eta"},
    "custom": {"utility.grid_file"},
}
_FLOAT_KEYS = {
    "r", "mu", "sigma", "beta",
    "utility.p", "utility.eta", "utility.K",
    "wealth", "phi", "tol_phi", "tol_root", "dt", "t_max",
}
_INT_KEYS = {"seed", "n_paths"}
_STR_KEYS = {"utility.kind", "utility.grid_file", "format", "out_path"}
_ALL_KEYS = _FLOAT_KEYS | _INT_KEYS | _STR_KEYS

_POLICY_GRID_POINTS = 101
_POLICY_GRID_SPAN = 100.0
_FRONTIER_POINTS = 50


@dataclass(frozen=True)
class RunConfig:
    market: MarketParams
    utility: Utility
    wealth: float | None
    phi: float | None
    tol_phi: float
    tol_root: float | None
    seed: int
    n_paths: int
    dt: float
    t_max: float | None
    out_format: str | None
    out_path: str | None

    def solver_tol(self) -> SolverTolerances:
        if self.tol_root is None:
            return SolverTolerances()
        return SolverTolerances(
            invert_residual=self.tol_root, floor_residual=self.tol_root
        )


def _parse_value(key: str, raw: str):
    if key in _FLOAT_KEYS:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"config key {key} expects a number, got {raw!r}") from None
    if key in _INT_KEYS:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(
                f"config key {key} expects an integer, got {raw!r}"
            ) from None
    return raw


def _parse_lines(text: str) -> dict:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        if raw == "":
            raise ConfigError(f"line {lineno}: empty value for key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def _load_grid_utility(path: Path) -> Utility:
    if not path.exists():
        raise ConfigError(f"utility.grid_file not found: {path}")
    try:
        data = np.loadtxt(path, comments="#", delimiter=None, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"could not parse utility.grid_file {path}: {exc}") from None
    if data.shape[1] != 2:
        raise ConfigError(
            f"utility.grid_file {path} must have two columns "
            f"(consumption, marginal), got {data.shape[1]}"
        )
    return TabulatedUtility(grid=data[:, 0], marginal_values=data[:, 1])


def _build_utility(values: dict, config_dir: Path) -> Utility:
    kind = values.get("utility.kind")
    if kind is None:
        raise ConfigError("missing required config key utility.kind")
    if kind not in _UTILITY_KEYS:
        raise ConfigError(
            f"utility.kind must be one of {sorted(_UTILITY_KEYS)}, got {kind!r}"
        )
    given = {k for k in values if k.startswith("utility.") and k != "utility.kind"}
    allowed = _UTILITY_KEYS[kind]
    extra = given - allowed
    if extra:
        raise ConfigError(
            f"config keys {sorted(extra)} are not used by utility.kind={kind}"
        )
    missing = _UTILITY_REQUIRED[kind] - given
    if missing:
        raise ConfigError(
            f"utility.kind={kind} requires config keys {sorted(missing)}"
        )
    try:
        if kind == "power":
            return make_utility("power", p=values["utility.p"])
        if kind == "log":
            return make_utility("log")
        if kind == "shifted_power":
            return make_utility(
                "shifted_power",
                p=values["utility.p"],
                eta=values["utility.eta"],
                bequest_offset=values.get("utility.K", 0.0),
            )
        return _load_grid_utility(config_dir / values["utility.grid_file"])
    except ParameterError as exc:
        raise ConfigError(f"invalid utility parameters: {exc}") from None


def parse_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = _parse_lines(path.read_text(encoding="utf-8"))

    missing = [k for k in _MARKET_KEYS if k not in values]
    if missing:
        raise ConfigError(f"missing required market keys: {missing}")
    try:
        market = MarketParams(
            r=values["r"], mu=values["mu"], sigma=values["sigma"], beta=values["beta"]
        ).validated()
    except ParameterError as exc:
        raise ConfigError(f"invalid market parameters: {exc}") from None

    utility = _build_utility(values, path.parent)

    out_format = values.get("format")
    if out_format is not None and out_format not in ("json", "csv"):
        raise ConfigError(f"format must be json or csv, got {out_format!r}")

    return RunConfig(
        market=market,
        utility=utility,
        wealth=values.get("wealth"),
        phi=values.get("phi"),
        tol_phi=values.get("tol_phi", 1e-6),
        tol_root=values.get("tol_root"),
        seed=values.get("seed", 0),
        n_paths=values.get("n_paths", 100_000),
        dt=values.get("dt", 1e-3),
        t_max=values.get("t_max"),
        out_format=out_format,
        out_path=values.get("out_path"),
    )


# --------------------------------------------------------------------------
# emission
# --------------------------------------------------------------------------


def _check_finite(name: str, value: float) -> float:
    if not math.isfinite(value):
        raise NumericalError(f"output field {name} is not finite: {value}")
    return value


def _csv_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _emit_csv(columns: list[str], rows: list[list]) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def _emit_json(fields: dict) -> str:
    return json.dumps(fields, indent=2, allow_nan=False) + "\n"


def _write_output(text: str, out_path: str | None) -> None:
    if out_path is None:
        sys.stdout.write(text)
    else:
        Path(out_path).write_text(text, encoding="utf-8", newline="")


# --------------------------------------------------------------------------
# command implementations
# --------------------------------------------------------------------------


def _require(config: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(config, n) is None]
    if missing:
        keys = {"wealth": "wealth", "phi": "phi"}
        raise ConfigError(
            f"missing required config keys: {[keys.get(n, n) for n in missing]}"
        )


def _calibrated(config: RunConfig) -> CalibrationResult:
    _require(config, "wealth", "phi")
    request = CalibrationRequest(
        market=config.market,
        utility=config.utility,
        wealth=config.wealth,
        ruin_bound=config.phi,
        ruin_tol=config.tol_phi,
        solver_tol=config.solver_tol(),
    )
    return calibrate_penalty(request)


def _solution_fields(result: CalibrationResult, x: float) -> dict:
    sol = result.solution
    coeffs = sol.coeffs
    c, pi = sol.policy(x)
    y_bar = coeffs.y_bar
    fields = {
        "P": _check_finite("P", coeffs.penalty),
        "case": coeffs.case.value,
        "a": _check_finite("a", coeffs.floor),
        "B": _check_finite("B", coeffs.wealth_coef),
        "y_bar": "inf" if math.isinf(y_bar) else _check_finite("y_bar", y_bar),
        "x_bar": _check_finite("x_bar", coeffs.x_bar),
        "V": _check_finite("V", sol.value(x)),
        "c": _check_finite("c", c),
        "pi": _check_finite("pi", pi),
        "psi": _check_finite("psi", sol.ruin_probability(x)),
        "binding": result.binding,
        "iterations": result.iterations,
    }
    return fields


def _cmd_solve(config: RunConfig) -> tuple[str, int]:
    result = _calibrated(config)
    fields = _solution_fields(result, config.wealth)
    if (config.out_format or "json") == "json":
        return _emit_json(fields), 0
    return _emit_csv(list(fields), [list(fields.values())]), 0


def _wealth_grid(x: float) -> np.ndarray:
    return np.geomspace(x / _POLICY_GRID_SPAN, x * _POLICY_GRID_SPAN,
                        _POLICY_GRID_POINTS)


def _cmd_policy(config: RunConfig) -> tuple[str, int]:
    result = _calibrated(config)
    sol = result.solution
    rows = []
    for x in _wealth_grid(config.wealth):
        x = float(x)
        c, pi = sol.policy(x)
        rows.append([
            _check_finite("x", x),
            _check_finite("V", sol.value(x)),
            _check_finite("c", c),
            _check_finite("pi", pi),
            _check_finite("psi", sol.ruin_probability(x)),
        ])
    columns = ["x", "V", "c", "pi", "psi"]
    if config.out_format == "json":
        fields = {name: [row[i] for row in rows] for i, name in enumerate(columns)}
        return _emit_json(fields), 0
    return _emit_csv(columns, rows), 0


def _frontier_penalties(config: RunConfig) -> np.ndarray:
    """Penalty grid from (nearly) zero ruin up to the unconstrained level."""
    base = CalibrationRequest(
        market=config.market,
        utility=config.utility,
        wealth=config.wealth,
        ruin_bound=0.5,
        ruin_tol=config.tol_phi,
        solver_tol=config.solver_tol(),
    )
    psi_free = unconstrained_ruin(base)
    if psi_free == 0.0:
        raise ModelError(
            "the unconstrained plan never ruins; the ruin frontier is a "
            "single point at P = 0"
        )
    u0 = config.utility.value_at_zero
    if math.isfinite(u0):
        p_min = u0 / config.market.beta
    else:
        lo = calibrate_penalty(replace(base, ruin_bound=0.01 * psi_free))
        p_min = lo.penalty
    u_top = config.utility.value_limit_inf
    degenerate = math.isfinite(u_top) and 0.0 >= u_top / config.market.beta
    if degenerate:
        hi = calibrate_penalty(replace(base, ruin_bound=0.99 * psi_free))
        p_max = hi.penalty
    else:
        p_max = 0.0
    return np.linspace(p_min, p_max, _FRONTIER_POINTS)


def _cmd_frontier(config: RunConfig) -> tuple[str, int]:
    _require(config, "wealth")
    x = config.wealth
    rows = []
    for penalty in _frontier_penalties(config):
        sol = build_solution(
            float(penalty), config.utility, config.market, config.solver_tol()
        )
        rows.append([
            _check_finite("P", float(penalty)),
            _check_finite("psi", sol.ruin_probability(x)),
            _check_finite("V", sol.value(x)),
        ])
    columns = ["P", "psi", "V"]
    if config.out_format == "json":
        fields = {name: [row[i] for row in rows] for i, name in enumerate(columns)}
        return _emit_json(fields), 0
    return _emit_csv(columns, rows), 0


def _cmd_simulate(config: RunConfig) -> tuple[str, int]:
    from .montecarlo import SimConfig, simulate_primal

    result = _calibrated(config)
    sim_config = SimConfig(
        n_paths=config.n_paths,
        dt=config.dt,
        t_max=config.t_max,
        seed=config.seed,
    ).validated()
    estimate = simulate_primal(
        result.solution, config.wealth, config.market, sim_config
    )
    fields = {
        "ruin_prob": _check_finite("ruin_prob", estimate.ruin_prob),
        "ruin_se": _check_finite("ruin_se", estimate.ruin_se),
        "utility_mean": _check_finite("utility_mean", estimate.utility_mean),
        "utility_se": _check_finite("utility_se", estimate.utility_se),
        "utility_discounted_mean": _check_finite(
            "utility_discounted_mean", estimate.utility_discounted_mean
        ),
        "utility_discounted_se": _check_finite(
            "utility_discounted_se", estimate.utility_discounted_se
        ),
        "penalized_value": _check_finite("penalized_value", estimate.penalized_value),
        "penalized_se": _check_finite("penalized_se", estimate.penalized_se),
        "n_effective": estimate.n_effective,
        "psi": _check_finite("psi", result.solution.ruin_probability(config.wealth)),
        "P": _check_finite("P", result.penalty),
        "case": result.solution.coeffs.case.value,
    }
    if (config.out_format or "json") == "json":
        return _emit_json(fields), 0
    return _emit_csv(list(fields), [list(fields.values())]), 0


def _check_rows(config: RunConfig) -> list[list]:
    result = _calibrated(config)
    sol = result.solution
    x0 = config.wealth
    rows = []

    xs = np.geomspace(x0 / 100.0, x0 * 100.0, 200)
    worst = 0.0
    for x in xs:
        x = float(x)
        y = sol.dual_of_wealth(x)
        worst = max(worst, abs(sol.wealth_of_dual(y) - x) / (1.0 + abs(x)))
    rows.append(["inversion_roundtrip", worst, 1e-9])

    worst = 0.0
    for x in np.geomspace(x0 / 100.0, x0 * 100.0, 50):
        x = float(x)
        v = sol.value(x)
        worst = max(worst, abs(sol.hjb_residual(x)) / (1.0 + abs(v)))
    rows.append(["hjb_residual", worst, 1e-6])

    worst = 0.0
    y_bar = sol.coeffs.y_bar
    if math.isfinite(y_bar):
        roots = sol.roots
        beta = config.market.beta
        r = config.market.r
        for frac in np.linspace(0.05, 0.95, 19):
            y = float(frac) * y_bar
            prob = sol.ruin_curve().prob_of_dual(y)
            d1 = roots.rho_plus * prob / y
            d2 = roots.rho_plus * (roots.rho_plus - 1.0) * prob / (y * y)
            resid = beta * prob + (r - beta) * y * d1 - roots.gamma * y * y * d2
            worst = max(worst, abs(resid) / (beta * prob))
    rows.append(["ruin_ode", worst, 1e-10])

    worst_drop = 0.0
    try:
        penalties = _frontier_penalties(config)
    except ModelError:
        penalties = None
    if penalties is not None:
        prev = -math.inf
        for penalty in penalties[:: max(1, len(penalties) // 20)]:
            sol_p = build_solution(
                float(penalty), config.utility, config.market, config.solver_tol()
            )
            psi = sol_p.ruin_probability(x0)
            worst_drop = max(worst_drop, prev - psi)
            prev = psi
    rows.append(["ruin_monotone_in_penalty", worst_drop, 1e-10])
    return rows


def _cmd_check(config: RunConfig) -> tuple[str, int]:
    rows = _check_rows(config)
    table = [[name, worst, tol, bool(worst <= tol)] for name, worst, tol in rows]
    ok = all(row[3] for row in table)
    if config.out_format == "csv":
        text = _emit_csv(["check", "worst", "tolerance", "passed"], table)
    else:
        fields = {
            "checks": [
                {
                    "check": name,
                    "worst": _check_finite(name, worst),
                    "tolerance": tol,
                    "passed": passed,
                }
                for name, worst, tol, passed in table
            ],
            "passed": ok,
        }
        text = _emit_json(fields)
    return text, 0 if ok else 4


# --------------------------------------------------------------------------
# argument handling
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit code 1 instead of argparse's 2
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ruinbound", add_help=True)
    parser.add_argument("command", choices=_COMMANDS)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None)
    parser.add_argument("--format", choices=("json", "csv"), default=None)
    parser.add_argument("--seed", type=int, default=None)
    return parser


def run(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        config = parse_config(args.config)
        if args.format is not None:
            config = _with(config, out_format=args.format)
        if args.seed is not None:
            config = _with(config, seed=args.seed)
        if args.out is not None:
            config = _with(config, out_path=args.out)
        handler = {
            "solve": _cmd_solve,
            "policy": _cmd_policy,
            "frontier": _cmd_frontier,
            "simulate": _cmd_simulate,
            "check": _cmd_check,
        }[args.command]
        text, code = handler(config)
        _write_output(text, config.out_path)
        return code
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except RuinboundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _with(config: RunConfig, **changes) -> RunConfig:
    return replace(config, **changes)


def console_entry() -> None:
    sys.exit(run())
