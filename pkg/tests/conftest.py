import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ruinbound import (
    MarketParams,
    build_solution,
    derive_roots,
    make_utility,
    penalty_threshold,
)

# Baseline market used throughout: gamma = 0.02, lam = -1-sqrt(2), sqrt(2)-1,
# rho = -sqrt(2), sqrt(2).
M0 = MarketParams(r=0.02, mu=0.06, sigma=0.2, beta=0.04)


@pytest.fixture(scope="session")
def m0():
    return M0.validated()


@pytest.fixture(scope="session")
def roots_m0(m0):
    return derive_roots(m0)


@pytest.fixture(scope="session")
def power_half():
    return make_utility("power", p=0.5)


@pytest.fixture(scope="session")
def power_two():
    return make_utility("power", p=2.0)


@pytest.fixture(scope="session")
def log_utility():
    return make_utility("log")


@pytest.fixture(scope="session")
def shifted():
    return make_utility("shifted_power", p=2.0, eta=1.0, K=0.2)


@pytest.fixture(scope="session")
def p_star_shifted(shifted, roots_m0, m0):
    return penalty_threshold(shifted, roots_m0, m0.beta)


# One solved instance per coefficient regime, shared across test modules.


@pytest.fixture(scope="session")
def case_i(power_half, m0):
    return build_solution(0.0, power_half, m0)


@pytest.fixture(scope="session")
def case_ii(power_two, m0):
    return build_solution(-1.0, power_two, m0)


@pytest.fixture(scope="session")
def case_iii(shifted, m0):
    return build_solution(-3.0, shifted, m0)


@pytest.fixture(scope="session")
def case_iv(shifted, m0, p_star_shifted):
    return build_solution(p_star_shifted, shifted, m0)


@pytest.fixture(scope="session")
def case_v(shifted, m0):
    return build_solution(-1.0, shifted, m0)


@pytest.fixture(scope="session")
def all_cases(case_i, case_ii, case_iii, case_iv, case_v):
    return {
        "i": case_i,
        "ii": case_ii,
        "iii": case_iii,
        "iv": case_iv,
        "v": case_v,
    }


@pytest.fixture(scope="session")
def warm_kernels(m0):
    """Compile the simulation kernels once so timed tests measure the run."""
    from ruinbound.montecarlo import SimConfig, simulate_dual, simulate_primal, tabulate_policy

    cfg = SimConfig(n_paths=4, dt=0.5, t_max=2.0, seed=1)
    simulate_dual(0.5, 1.0, m0, config=cfg)
    table = tabulate_policy(lambda x: 0.0, lambda x: 0.1, 1.0, n_nodes=9)
    simulate_primal(table, 1.0, m0, config=cfg)
    return True
