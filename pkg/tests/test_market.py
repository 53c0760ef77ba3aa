"""Parameter validation and the characteristic root pair."""

import math
import random

import pytest

from ruinbound import MarketParams, ParameterError, derive_roots, validate_params

SQRT2 = math.sqrt(2.0)


def quadratic_residual(market, roots, lam):
    g = roots.gamma
    return g * lam * lam - (market.r - market.beta - g) * lam - market.r


def random_market(rng):
    r = rng.uniform(1e-3, 0.12)
    return MarketParams(
        r=r,
        mu=r + rng.uniform(1e-3, 0.25),
        sigma=rng.uniform(0.02, 0.8),
        beta=rng.uniform(1e-3, 0.2),
    )


def test_baseline_roots_match_closed_forms(m0, roots_m0):
    # gamma = ((mu-r)/sigma)^2/2 = 0.02; the roots then collapse to
    # lam = -1 -+ sqrt(2) because r = gamma and beta = 2*gamma.
    assert roots_m0.gamma == pytest.approx(0.02, rel=1e-14)
    assert roots_m0.lambda_plus == pytest.approx(SQRT2 - 1.0, rel=1e-13)
    assert roots_m0.lambda_minus == pytest.approx(-1.0 - SQRT2, rel=1e-13)
    assert roots_m0.rho_plus == pytest.approx(SQRT2, rel=1e-13)
    assert roots_m0.rho_minus == pytest.approx(-SQRT2, rel=1e-13)


def test_rho_is_exactly_one_plus_lambda(roots_m0):
    assert roots_m0.rho_plus == 1.0 + roots_m0.lambda_plus
    assert roots_m0.rho_minus == 1.0 + roots_m0.lambda_minus


def test_lambda_spread(roots_m0):
    assert roots_m0.lambda_spread == roots_m0.lambda_plus - roots_m0.lambda_minus
    assert roots_m0.lambda_spread > 0.0


def test_validated_returns_same_instance(m0):
    assert m0.validated() is m0
    assert validate_params(m0) is m0


@pytest.mark.parametrize(
    "params, message",
    [
        (MarketParams(r=0.02, mu=0.02, sigma=0.2, beta=0.04), "mu must exceed r"),
        (MarketParams(r=0.02, mu=0.01, sigma=0.2, beta=0.04), "mu must exceed r"),
        (MarketParams(r=0.02, mu=0.06, sigma=0.0, beta=0.04), "sigma must be positive"),
        (MarketParams(r=0.02, mu=0.06, sigma=-0.2, beta=0.04), "sigma must be positive"),
        (MarketParams(r=0.0, mu=0.06, sigma=0.2, beta=0.04), "r must be positive"),
        (MarketParams(r=-0.01, mu=0.06, sigma=0.2, beta=0.04), "r must be positive"),
        (MarketParams(r=0.02, mu=0.06, sigma=0.2, beta=0.0), "beta must be positive"),
        (MarketParams(r=0.02, mu=math.nan, sigma=0.2, beta=0.04), "finite"),
        (MarketParams(r=0.02, mu=math.inf, sigma=0.2, beta=0.04), "finite"),
    ],
)
def test_validation_rejects_bad_parameters(params, message):
    with pytest.raises(ParameterError, match=message):
        validate_params(params)


def test_derive_roots_validates_first():
    with pytest.raises(ParameterError, match="mu must exceed r"):
        derive_roots(MarketParams(r=0.05, mu=0.03, sigma=0.2, beta=0.04))


def test_random_parameter_sets_satisfy_root_contracts():
    rng = random.Random(20250818)
    for _ in range(100):
        market = random_market(rng)
        roots = derive_roots(market)
        g = roots.gamma

        assert g > 0.0
        assert roots.lambda_minus < -1.0
        assert roots.lambda_plus > 0.0
        assert roots.rho_minus < 0.0
        assert roots.rho_plus > 1.0
        assert roots.rho_plus == 1.0 + roots.lambda_plus
        assert roots.rho_minus == 1.0 + roots.lambda_minus

        for lam in (roots.lambda_minus, roots.lambda_plus):
            scale = max(1.0, g * lam * lam)
            assert abs(quadratic_residual(market, roots, lam)) <= 1e-12 * scale

        # Vieta: product of the roots is -r/gamma, sum is (r-beta-gamma)/gamma.
        assert roots.lambda_plus * roots.lambda_minus == pytest.approx(
            -market.r / g, rel=1e-12
        )
        assert roots.lambda_plus + roots.lambda_minus == pytest.approx(
            (market.r - market.beta - g) / g, rel=1e-11, abs=1e-13
        )
        # The shifted pair multiplies to -beta/gamma.
        assert roots.rho_plus * roots.rho_minus == pytest.approx(
            -market.beta / g, rel=1e-10
        )


def test_power_of_rho_plus_solves_ruin_equation():
    # f(y) = y^rho_+ must satisfy beta*f = -(r-beta)*y*f' + gamma*y^2*f''.
    rng = random.Random(99)
    for _ in range(100):
        market = random_market(rng)
        roots = derive_roots(market)
        rho = roots.rho_plus
        for y in (0.037, 0.61, 1.0, 4.3, 217.0):
            f = y ** rho
            fp = rho * y ** (rho - 1.0)
            fpp = rho * (rho - 1.0) * y ** (rho - 2.0)
            terms = (
                market.beta * f,
                (market.r - market.beta) * y * fp,
                -roots.gamma * y * y * fpp,
            )
            scale = max(abs(t) for t in terms)
            assert abs(sum(terms)) <= 1e-10 * scale


def test_extreme_but_valid_parameters_keep_root_order():
    for market in (
        MarketParams(r=1e-4, mu=0.5, sigma=0.03, beta=1e-4),
        MarketParams(r=0.1, mu=0.1001, sigma=1.5, beta=0.3),
    ):
        roots = derive_roots(market)
        assert roots.lambda_minus < -1.0 < 0.0 < roots.lambda_plus
        for lam in (roots.lambda_minus, roots.lambda_plus):
            scale = max(1.0, roots.gamma * lam * lam)
            assert abs(quadratic_residual(market, roots, lam)) <= 1e-12 * scale
