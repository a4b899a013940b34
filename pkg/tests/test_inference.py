import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hfmartingale.estfun import make_estimating_function
from hfmartingale.inference import (
    efficient_bound,
    empirical_covariance,
    gamma_curve,
    scaling_matrix,
    theoretical_asymptotics,
)
from hfmartingale.model import OrnsteinUhlenbeck
from hfmartingale.simulate import simulate_path
from hfmartingale.solve import SolveSettings, solve_estimating_equation

TH = (1.0, 1.0)


def test_scaling_matrix():
    assert np.allclose(np.diag(scaling_matrix(100, 0.1)), [0.3162278, 1.0], atol=1e-7)
    with pytest.raises(ValueError):
        scaling_matrix(0, 0.1)


def test_ou_efficient_asymptotics(ou):
    rep = theoretical_asymptotics(make_estimating_function("quad-exact-efficient", ou), ou, TH)
    assert rep.S[0, 0] == pytest.approx(0.5, abs=1e-6)
    assert rep.S[1, 1] == pytest.approx(2.0, abs=1e-6)
    assert abs(rep.S[1, 0]) < 1e-8
    assert rep.W1 == pytest.approx(0.5, abs=1e-6)
    assert rep.W2 == pytest.approx(2.0, abs=1e-6)
    assert np.allclose(rep.cov_rate_optimal, np.diag([2.0, 0.5]), atol=1e-6)
    assert np.allclose(rep.cov_rate_optimal, rep.sigma_bound, atol=1e-6)


def test_efficient_bound(ou, cir):
    assert np.allclose(efficient_bound(ou, TH), np.diag([2.0, 0.5]), atol=1e-6)
    sig = efficient_bound(cir, (1.0, 0.5))
    assert sig[0, 1] == 0 and sig[1, 0] == 0
    assert np.all(np.isfinite(np.diag(sig))) and np.all(np.diag(sig) > 0)
    # Gamma(k=8, rate=8) law: E[(1 - x)^2 / x] = rate / (k - 1) - 2 + k / rate = 1/7
    assert sig[0, 0] == pytest.approx(0.25 * 7, rel=1e-6)
    assert sig[1, 1] == pytest.approx(0.25 / 2, rel=1e-6)


@pytest.mark.parametrize("name", ["quad-exact-efficient", "euler", "gh-quadratic", "gh-general", "local-gaussian"])
@pytest.mark.parametrize("model_name", ["ou", "cir"])
def test_efficient_catalog_attains_bound(ou, cir, name, model_name):
    model, th = (ou, TH) if model_name == "ou" else (cir, (1.0, 0.5))
    rep = theoretical_asymptotics(make_estimating_function(name, model), model, th)
    assert np.allclose(np.diag(rep.cov_rate_optimal), np.diag(rep.sigma_bound), rtol=1e-6)
    assert abs(rep.S[1, 0]) < 1e-6
    assert np.allclose(rep.V, rep.V.T)
    assert np.all(np.linalg.eigvalsh(rep.V) >= -1e-10)


def test_general_covariance_agrees_on_alpha_block(ou):
    rep = theoretical_asymptotics(make_estimating_function("quad-exact-efficient", ou), ou, TH)
    assert rep.cov_general[0, 0] == pytest.approx(rep.cov_rate_optimal[0, 0], rel=1e-6)


def test_non_rate_general_covariance(ou):
    ef = make_estimating_function("non-rate-control", ou, a1=[1.0, 1.0], a2=[1.0])
    rep = theoretical_asymptotics(ef, ou, TH)
    Sinv = np.linalg.inv(rep.S)
    assert np.allclose(rep.cov_general, Sinv @ rep.V @ Sinv.T, atol=1e-10)
    assert np.allclose(np.diag(rep.cov_general), [6.0, 1.0], atol=1e-5)


def test_singular_S_gives_no_general_covariance(ou):
    ef = make_estimating_function("non-rate-control", ou)
    with pytest.warns(RuntimeWarning, match="singular"):
        rep = theoretical_asymptotics(ef, ou, TH)
    assert rep.cov_general is None
    assert rep.to_dict()["cov_general"] is None


def test_gamma_curve(ou):
    ef = make_estimating_function("quad-exact-efficient", ou)
    g = gamma_curve(ef, ou, TH, [TH, (2.0, 1.0), (1.0, 1.2)])
    assert np.allclose(g[0], 0.0, atol=1e-8)
    assert np.allclose(g[1], [-0.5, 0.0], atol=1e-7)
    # canonical diffusion weights: 1/2 (1 - 1.44) * 2 * 1.2 / 1.2^4
    assert g[2][0] == pytest.approx(0.0, abs=1e-8)
    assert g[2][1] == pytest.approx(0.5 * (1 - 1.44) * 2 * 1.2 / 1.2**4, abs=1e-7)
    assert g[2][1] == pytest.approx(-0.2546296, abs=1e-7)


@settings(max_examples=6, deadline=None)
@given(beta=st.floats(0.6, 1.6))
def test_W2_added_term_nonnegative(beta):
    # OU, efficient weights: d_y^2 g_2 = 2 / beta^3 is constant in x
    ou = OrnsteinUhlenbeck()
    ef = make_estimating_function("quad-exact-efficient", ou)
    W2 = theoretical_asymptotics(ef, ou, (1.0, beta), TH).W2
    without_term = 0.5 * (2 / beta**3) ** 2
    assert W2 == pytest.approx(0.5 * (1 + 0.5 * (1 - beta**2) ** 2) * 4 / beta**6, rel=1e-6)
    assert W2 >= without_term * (1 - 1e-9)


def _fit(ou, seed, n=20_000):
    d = n ** -0.6
    path = simulate_path(ou, TH, n, d, seed=seed, scheme="exact")
    ef = make_estimating_function("quad-exact-efficient", ou)
    est = solve_estimating_equation(ef, path, SolveSettings(start=TH))
    return ef, path, est


def test_empirical_covariance_structure(ou):
    ef, path, est = _fit(ou, 77)
    rate = empirical_covariance(ef, path, est.theta_hat, "rate-optimal")
    gen = empirical_covariance(ef, path, est.theta_hat, "general")
    # time average of x^2 over T = n delta ~ 52 has sd ~ sqrt(0.5 / T) ~ 0.1
    assert abs(rate.S_hat[0, 0] - 0.5) <= 0.3
    for c in (rate, gen):
        assert np.allclose(c.cov_hat, c.cov_hat.T)
        assert np.all(np.linalg.eigvalsh(c.cov_hat) >= -1e-12)
        assert np.all(np.linalg.eigvalsh(c.V_or_W_hat) >= -1e-12)
    se = rate.standard_errors(path.n, path.delta)
    assert se[0] == pytest.approx(math.sqrt(rate.cov_hat[0, 0] / (path.n * path.delta)))
    assert se[1] == pytest.approx(math.sqrt(rate.cov_hat[1, 1] / path.n))
    with pytest.raises(ValueError):
        empirical_covariance(ef, path, est.theta_hat, "robust")


def test_empirical_covariance_limits(ou):
    s11, ratio = [], []
    for seed in range(20):
        ef, path, est = _fit(ou, 500 + seed)
        rate = empirical_covariance(ef, path, est.theta_hat, "rate-optimal")
        gen = empirical_covariance(ef, path, est.theta_hat, "general")
        s11.append(rate.S_hat[0, 0])
        ratio.append(gen.cov_hat[0, 0] / rate.cov_hat[0, 0])
    assert 0.45 <= np.mean(s11) <= 0.55
    assert 0.9 <= np.median(ratio) <= 1.1
