"""Command line driver: config parsing, the five commands, exit codes."""

import json
import math
import textwrap

import numpy as np
import pytest

import ruinbound.cli as cli
from oracles import merton_consumption_fraction, merton_investment_fraction
from ruinbound import CalibrationRequest, calibrate_penalty
from ruinbound.cli import ConfigError, RunConfig, parse_config, run
from ruinbound.errors import ParameterError
from ruinbound.utility import TabulatedUtility

M0_BLOCK = """\
r = 0.02
mu = 0.06
sigma = 0.2
beta = 0.04
"""

MERTON_CFG = M0_BLOCK + """\
utility.kind = power
utility.p = 0.5
wealth = 10
phi = 0
"""

BINDING_CFG = M0_BLOCK + """\
utility.kind = power
utility.p = 2
wealth = 10
phi = 0.05
"""

SHIFTED_CFG = M0_BLOCK + """\
utility.kind = shifted_power
utility.p = 2
utility.eta = 1
utility.K = 0.2
wealth = 2
phi = 0.3
"""


def write_config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text), encoding="utf-8")
    return str(path)


def run_json(tmp_path, text, argv, capsys):
    path = write_config(tmp_path, text)
    code = run(argv + ["--config", path])
    out = capsys.readouterr().out
    return code, json.loads(out)


# --------------------------------------------------------------------------
# config parsing
# --------------------------------------------------------------------------


def test_parse_config_defaults(tmp_path):
    config = parse_config(write_config(tmp_path, MERTON_CFG))
    assert isinstance(config, RunConfig)
    assert config.market.r == 0.02
    assert config.wealth == 10.0
    assert config.phi == 0.0
    assert config.tol_phi == 1e-6
    assert config.tol_root is None
    assert config.seed == 0
    assert config.n_paths == 100_000
    assert config.dt == 1e-3
    assert config.t_max is None
    assert config.out_format is None
    assert config.out_path is None


def test_parse_config_comments_and_blanks(tmp_path):
    text = "# leading comment\n\n" + MERTON_CFG + "\n  # trailing\n"
    config = parse_config(write_config(tmp_path, text))
    assert config.wealth == 10.0


def test_solver_tol_override(tmp_path):
    config = parse_config(write_config(tmp_path, MERTON_CFG + "tol_root = 1e-8\n"))
    tol = config.solver_tol()
    assert tol.invert_residual == 1e-8
    assert tol.floor_residual == 1e-8


@pytest.mark.parametrize(
    ("line", "fragment"),
    [
        ("bogus = 1", "unknown config key"),
        ("r = 0.05", "duplicate config key"),
        ("wealth ten", "expected `key = value`"),
        ("t_max =", "empty value"),
        ("t_max = ten", "expects a number"),
        ("seed = 1.5", "expects an integer"),
        ("format = yaml", "format must be json or csv"),
    ],
)
def test_parse_config_rejects_bad_lines(tmp_path, line, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(write_config(tmp_path, MERTON_CFG + line + "\n"))


def test_parse_config_missing_market_keys(tmp_path):
    text = "r = 0.02\nmu = 0.06\nutility.kind = log\n"
    with pytest.raises(ConfigError, match="missing required market keys"):
        parse_config(write_config(tmp_path, text))


def test_parse_config_invalid_market(tmp_path):
    text = MERTON_CFG.replace("mu = 0.06", "mu = 0.01")
    with pytest.raises(ConfigError, match="invalid market parameters"):
        parse_config(write_config(tmp_path, text))


@pytest.mark.parametrize(
    ("mutation", "fragment"),
    [
        ("utility.kind = bogus\n", "must be one of"),
        ("utility.kind = log\nutility.p = 2\n", "not used by"),
        ("utility.kind = power\n", "requires config keys"),
        ("", "missing required config key utility.kind"),
    ],
)
def test_parse_config_utility_strictness(tmp_path, mutation, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(write_config(tmp_path, M0_BLOCK + mutation + "wealth = 1\n"))


def test_parse_config_invalid_utility_params(tmp_path):
    text = M0_BLOCK + "utility.kind = power\nutility.p = -1\n"
    with pytest.raises(ConfigError, match="invalid utility parameters"):
        parse_config(write_config(tmp_path, text))


def test_parse_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="config file not found"):
        parse_config(tmp_path / "nope.cfg")


# --------------------------------------------------------------------------
# solve
# --------------------------------------------------------------------------


def test_solve_merton_json(tmp_path, capsys, m0):
    code, fields = run_json(tmp_path, MERTON_CFG, ["solve"], capsys)
    assert code == 0
    assert fields["case"] == "i"
    assert fields["P"] == 0.0
    assert fields["psi"] == 0.0
    assert fields["y_bar"] == "inf"
    assert fields["binding"] is False
    assert fields["iterations"] == 0
    assert fields["c"] == pytest.approx(
        10.0 * merton_consumption_fraction(m0, 0.5), rel=1e-10
    )
    assert fields["pi"] == pytest.approx(
        10.0 * merton_investment_fraction(m0, 0.5), rel=1e-8
    )
    assert fields["V"] > 0.0


def test_solve_binding_matches_library(tmp_path, capsys, power_two, m0):
    code, fields = run_json(tmp_path, BINDING_CFG, ["solve"], capsys)
    assert code == 0
    result = calibrate_penalty(
        CalibrationRequest(
            market=m0, utility=power_two, wealth=10.0, ruin_bound=0.05
        )
    )
    assert fields["case"] == "ii"
    assert fields["binding"] is True
    assert fields["iterations"] == result.iterations
    assert fields["P"] == pytest.approx(result.penalty, rel=1e-12)
    assert abs(fields["psi"] - 0.05) <= 1e-6
    assert fields["y_bar"] > 0.0
    assert fields["x_bar"] == 0.0


def test_solve_csv_flag(tmp_path, capsys):
    path = write_config(tmp_path, BINDING_CFG)
    code = run(["solve", "--config", path, "--format", "csv"])
    out = capsys.readouterr().out
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 2
    header = lines[0].split(",")
    assert header == [
        "P", "case", "a", "B", "y_bar", "x_bar",
        "V", "c", "pi", "psi", "binding", "iterations",
    ]
    row = dict(zip(header, lines[1].split(",")))
    assert row["case"] == "ii"
    assert row["binding"] == "true"
    assert float(row["P"]) < 0.0
    assert abs(float(row["psi"]) - 0.05) <= 1e-6


def test_solve_format_key_in_config(tmp_path, capsys):
    path = write_config(tmp_path, MERTON_CFG + "format = csv\n")
    assert run(["solve", "--config", path]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("P,case,")


def test_solve_writes_out_file(tmp_path, capsys):
    path = write_config(tmp_path, MERTON_CFG)
    out_file = tmp_path / "solution.json"
    code = run(["solve", "--config", path, "--out", str(out_file)])
    assert code == 0
    assert capsys.readouterr().out == ""
    fields = json.loads(out_file.read_text())
    assert fields["case"] == "i"


def test_solve_out_path_key_in_config(tmp_path, capsys):
    out_file = tmp_path / "via_config.json"
    path = write_config(tmp_path, MERTON_CFG + f"out_path = {out_file}\n")
    assert run(["solve", "--config", path]) == 0
    assert capsys.readouterr().out == ""
    assert json.loads(out_file.read_text())["case"] == "i"


def test_solve_requires_wealth_and_phi(tmp_path, capsys):
    text = M0_BLOCK + "utility.kind = power\nutility.p = 2\n"
    path = write_config(tmp_path, text)
    assert run(["solve", "--config", path]) == 1
    err = capsys.readouterr().err
    assert "missing required config keys" in err
    assert "wealth" in err and "phi" in err


# --------------------------------------------------------------------------
# policy
# --------------------------------------------------------------------------


def test_policy_csv_grid(tmp_path, capsys):
    # tabular commands default to csv
    path = write_config(tmp_path, BINDING_CFG)
    code = run(["policy", "--config", path])
    out = capsys.readouterr().out
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "x,V,c,pi,psi"
    assert len(lines) == 102
    rows = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    expected_x = np.geomspace(0.1, 1000.0, 101)
    assert np.allclose(rows[:, 0], expected_x, rtol=1e-12)
    assert np.all(np.diff(rows[:, 1]) > 0.0)  # V strictly increasing
    assert np.all(np.diff(rows[:, 4]) <= 1e-12)  # psi nonincreasing
    assert np.all(rows[:, 3] > 0.0)
    assert np.all(rows[:, 2] >= 0.0)


def test_policy_json_lists(tmp_path, capsys):
    code, fields = run_json(
        tmp_path, BINDING_CFG, ["policy", "--format", "json"], capsys
    )
    assert code == 0
    assert set(fields) == {"x", "V", "c", "pi", "psi"}
    for values in fields.values():
        assert len(values) == 101
    assert fields["x"][0] == pytest.approx(0.1, rel=1e-12)
    assert fields["x"][-1] == pytest.approx(1000.0, rel=1e-12)


# --------------------------------------------------------------------------
# frontier
# --------------------------------------------------------------------------


def test_frontier_monotone(tmp_path, capsys):
    text = M0_BLOCK + "utility.kind = power\nutility.p = 2\nwealth = 10\n"
    code, fields = run_json(
        tmp_path, text, ["frontier", "--format", "json"], capsys
    )
    assert code == 0
    assert set(fields) == {"P", "psi", "V"}
    penalties = np.array(fields["P"])
    psi = np.array(fields["psi"])
    assert len(penalties) == 50
    assert np.all(np.diff(penalties) > 0.0)
    assert np.all(np.diff(psi) >= -1e-10)
    assert psi[0] <= 0.02
    assert psi[-1] >= 0.98


def test_frontier_never_ruins_exit_2(tmp_path, capsys):
    text = M0_BLOCK + "utility.kind = power\nutility.p = 0.5\nwealth = 10\n"
    path = write_config(tmp_path, text)
    assert run(["frontier", "--config", path]) == 2
    err = capsys.readouterr().err
    assert err.startswith("model error:")
    assert "single point" in err


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

SIM_CFG = BINDING_CFG + """\
n_paths = 2000
dt = 0.005
seed = 7
"""


def test_simulate_json_fields(tmp_path, capsys, warm_kernels):
    code, fields = run_json(tmp_path, SIM_CFG, ["simulate"], capsys)
    assert code == 0
    assert set(fields) == {
        "ruin_prob", "ruin_se", "utility_mean", "utility_se",
        "utility_discounted_mean", "utility_discounted_se",
        "penalized_value", "penalized_se", "n_effective",
        "psi", "P", "case",
    }
    assert fields["case"] == "ii"
    assert fields["n_effective"] == 2000
    assert 0.0 < fields["ruin_prob"] < 1.0
    assert fields["ruin_se"] > 0.0
    # the estimate should sit near the analytic level it is checking
    assert abs(fields["ruin_prob"] - fields["psi"]) <= 5.0 * fields["ruin_se"] + 0.005
    # negative penalty drags the penalized value below the plain one
    assert fields["penalized_value"] <= fields["utility_discounted_mean"]


def test_simulate_reproducible_and_seed_flag(tmp_path, capsys, warm_kernels):
    path = write_config(tmp_path, SIM_CFG)
    out_a = tmp_path / "a.json"
    out_b = tmp_path / "b.json"
    out_c = tmp_path / "c.json"
    assert run(["simulate", "--config", path, "--out", str(out_a)]) == 0
    assert run(["simulate", "--config", path, "--out", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    assert run(["simulate", "--config", path, "--seed", "8",
                "--out", str(out_c)]) == 0
    a = json.loads(out_a.read_text())
    c = json.loads(out_c.read_text())
    assert a["ruin_prob"] != c["ruin_prob"]
    assert a["psi"] == c["psi"]  # the analytic side ignores the seed
    capsys.readouterr()


def test_simulate_csv_row(tmp_path, capsys, warm_kernels):
    text = SIM_CFG.replace("n_paths = 2000", "n_paths = 200")
    path = write_config(tmp_path, text)
    assert run(["simulate", "--config", path, "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2
    assert lines[0].split(",")[0] == "ruin_prob"
    assert lines[1].split(",")[-1] == "ii"


# --------------------------------------------------------------------------
# check
# --------------------------------------------------------------------------

CHECK_NAMES = {
    "inversion_roundtrip", "hjb_residual", "ruin_ode", "ruin_monotone_in_penalty",
}


def test_check_passes_power(tmp_path, capsys):
    code, fields = run_json(tmp_path, BINDING_CFG, ["check"], capsys)
    assert code == 0
    assert fields["passed"] is True
    assert {row["check"] for row in fields["checks"]} == CHECK_NAMES
    for row in fields["checks"]:
        assert row["passed"] is True
        assert row["worst"] <= row["tolerance"]


def test_check_passes_shifted(tmp_path, capsys):
    code, fields = run_json(tmp_path, SHIFTED_CFG, ["check"], capsys)
    assert code == 0
    assert fields["passed"] is True


def test_check_csv_and_failure_exit(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(cli, "_check_rows", lambda config: [["fake", 1.0, 1e-10]])
    path = write_config(tmp_path, BINDING_CFG)
    assert run(["check", "--config", path, "--format", "csv"]) == 4
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "check,worst,tolerance,passed"
    assert lines[1].split(",") == ["fake", "1", "1e-10", "false"]


# --------------------------------------------------------------------------
# custom tabulated utility
# --------------------------------------------------------------------------


def write_grid_file(tmp_path, name="marginal.txt"):
    grid = np.geomspace(1e-6, 1e6, 241)
    data = np.column_stack([grid, grid ** -0.7])
    path = tmp_path / name
    np.savetxt(path, data, header="consumption marginal")
    return name


def test_custom_grid_utility_solve(tmp_path, capsys, m0):
    name = write_grid_file(tmp_path)
    text = M0_BLOCK + (
        f"utility.kind = custom\nutility.grid_file = {name}\n"
        "wealth = 10\nphi = 0.1\n"
    )
    with pytest.warns(UserWarning, match="not binding"):
        code, fields = run_json(tmp_path, text, ["solve"], capsys)
    assert code == 0
    # anchoring U at zero on the first node leaves U(0) slightly negative,
    # so the zero-penalty plan tolerates a sliver of ruin: case ii, not i
    assert fields["case"] == "ii"
    assert fields["binding"] is False
    assert fields["P"] == 0.0
    grid = np.geomspace(1e-6, 1e6, 241)
    tab = TabulatedUtility(grid=grid, marginal_values=grid ** -0.7)
    with pytest.warns(UserWarning, match="not binding"):
        result = calibrate_penalty(
            CalibrationRequest(
                market=m0, utility=tab, wealth=10.0, ruin_bound=0.1
            )
        )
    assert fields["psi"] == pytest.approx(result.achieved_ruin, rel=1e-9)
    assert 0.0 < fields["psi"] < 1e-4
    assert fields["c"] == pytest.approx(
        10.0 * merton_consumption_fraction(m0, 0.7), rel=1e-2
    )
    assert fields["pi"] == pytest.approx(
        10.0 * merton_investment_fraction(m0, 0.7), rel=1e-4
    )


def test_custom_grid_missing_file(tmp_path, capsys):
    text = M0_BLOCK + (
        "utility.kind = custom\nutility.grid_file = nope.txt\n"
        "wealth = 10\nphi = 0.1\n"
    )
    path = write_config(tmp_path, text)
    assert run(["solve", "--config", path]) == 1
    assert "utility.grid_file not found" in capsys.readouterr().err


def test_custom_grid_bad_shape(tmp_path, capsys):
    grid = np.geomspace(1e-3, 1e3, 41)
    np.savetxt(tmp_path / "bad.txt", np.column_stack([grid, grid, grid]))
    text = M0_BLOCK + (
        "utility.kind = custom\nutility.grid_file = bad.txt\n"
        "wealth = 10\nphi = 0.1\n"
    )
    path = write_config(tmp_path, text)
    assert run(["solve", "--config", path]) == 1
    assert "two columns" in capsys.readouterr().err


# --------------------------------------------------------------------------
# exit codes
# --------------------------------------------------------------------------


def test_exit_1_config_error(tmp_path, capsys):
    path = write_config(tmp_path, MERTON_CFG + "bogus = 1\n")
    assert run(["solve", "--config", path]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_exit_1_missing_config_file(tmp_path, capsys):
    assert run(["solve", "--config", str(tmp_path / "nope.cfg")]) == 1
    assert "config file not found" in capsys.readouterr().err


def test_exit_1_bad_command(tmp_path, capsys):
    path = write_config(tmp_path, MERTON_CFG)
    assert run(["explode", "--config", path]) == 1
    assert "invalid choice" in capsys.readouterr().err


def test_exit_1_missing_config_flag(capsys):
    assert run(["solve"]) == 1
    assert "--config" in capsys.readouterr().err


def test_exit_2_model_error(tmp_path, capsys):
    # the unconstrained plan for p = 2 already ruins with certainty, so a
    # slack bound of 1 routes to the degenerate zero-penalty plan
    text = BINDING_CFG.replace("phi = 0.05", "phi = 1.0")
    path = write_config(tmp_path, text)
    assert run(["solve", "--config", path]) == 2
    assert "model error:" in capsys.readouterr().err


def test_exit_3_numerical_error(tmp_path, capsys):
    text = M0_BLOCK + "utility.kind = log\nwealth = 10\nphi = 0\n"
    path = write_config(tmp_path, text)
    assert run(["solve", "--config", path]) == 3
    err = capsys.readouterr().err
    assert err.startswith("numerical error:")
    assert "zero ruin bound" in err


def test_invalid_sim_config_exit_1(tmp_path, capsys):
    text = SIM_CFG.replace("n_paths = 2000", "n_paths = 0")
    path = write_config(tmp_path, text)
    assert run(["simulate", "--config", path]) == 1
    assert "n_paths" in capsys.readouterr().err


def test_console_entry_exists():
    assert callable(cli.console_entry)
    assert isinstance(run.__doc__, (str, type(None)))
    with pytest.raises(ParameterError):
        cli.MarketParams(r=0.02, mu=0.01, sigma=0.2, beta=0.04).validated()
