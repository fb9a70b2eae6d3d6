"""Mixed-model MCMC: posterior evaluation, sampler behavior, diagnostics."""

import math

import numpy as np
import pytest

from corrscan import MaternParams, PriorSpec, build_cov, cholesky, fit_model2, log_posterior
from corrscan.mcmc import (
    McmcConfig,
    ModelIIFit,
    RhoGridFactors,
    effective_sample_size,
    posterior_means,
)

from conftest import naive_log_posterior


def _toy_data(seed=0, m=8):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 50, (m, 2))
    dm = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    n = rng.uniform(500, 5000, m)
    y = rng.poisson(n * math.exp(-5.0))
    return y.astype(float), n, dm


# ---------------------------------------------------------------- log_posterior

def test_single_region_zero_count():
    # m=1, Y=0, Z=0: the Poisson term is exactly -N e^beta and the Gaussian
    # term is -0.5 log(sigma^2) for unit correlation
    val = log_posterior(beta=-2.0, sigma=0.5, rho=3.0, z=[0.0], y=[0.0],
                        n=[100.0], dm=[[0.0]])
    expected = -100.0 * math.exp(-2.0) - 0.5 * math.log(0.25)
    assert val == pytest.approx(expected, abs=1e-12)


def test_matches_naive_summation():
    y, n, dm = _toy_data(seed=1, m=6)
    rng = np.random.default_rng(2)
    z = rng.normal(0, 0.3, 6)
    got = log_posterior(-5.1, 0.4, 12.0, z, y, n, dm)
    ref = naive_log_posterior(-5.1, 0.4, 12.0, z, y, n, dm)
    assert got == pytest.approx(ref, abs=1e-10)


def test_ridge_identity():
    # shifting beta by +c and the field by -c changes only the Gaussian
    # quadratic form, by an exactly computable amount
    y, n, dm = _toy_data(seed=3, m=5)
    rng = np.random.default_rng(4)
    z = rng.normal(0, 0.2, 5)
    c = 0.37
    sigma, rho = 0.5, 8.0
    base = log_posterior(-5.0, sigma, rho, z, y, n, dm)
    shifted = log_posterior(-5.0 + c, sigma, rho, z - c, y, n, dm)
    r = build_cov(dm, MaternParams(1.0, rho, 1.0))
    sinv = np.linalg.inv(sigma**2 * r)
    expect = 0.5 * (z @ sinv @ z - (z - c) @ sinv @ (z - c))
    assert shifted - base == pytest.approx(expect, abs=1e-9)


def test_reject_states():
    y, n, dm = _toy_data(seed=5, m=5)
    z = np.zeros(5)
    assert log_posterior(-5.0, -0.1, 5.0, z, y, n, dm) == -np.inf
    assert log_posterior(-5.0, 0.5, 99.0, z, y, n, dm,
                         prior=PriorSpec(10)) == -np.inf
    assert log_posterior(1000.0, 0.5, 5.0, z, y, n, dm) == -np.inf  # overflow


# ------------------------------------------------------------- configuration

def test_prior_spec():
    with pytest.raises(ValueError):
        PriorSpec(1)
    p = PriorSpec(5)
    assert p.rho_grid.tolist() == [1, 2, 3, 4, 5]


def test_mcmc_config_validation():
    with pytest.raises(ValueError):
        McmcConfig(n_iter=100, burn_in=100)
    with pytest.raises(ValueError):
        McmcConfig(n_iter=100, burn_in=10, thin=0)


def test_rho_grid_factors_consistency():
    _, _, dm = _toy_data(seed=6, m=5)
    fac = RhoGridFactors(dm, PriorSpec(4), nu=1.0)
    for g, rho in enumerate(fac.grid):
        r = build_cov(dm, MaternParams(1.0, float(rho), 1.0))
        assert np.max(np.abs(fac.inv[g] @ r - np.eye(5))) < 1e-8
        sign, logdet = np.linalg.slogdet(r)
        assert fac.logdet[g] == pytest.approx(logdet, abs=1e-8)


# -------------------------------------------------------- effective sample size

def test_ess_iid_near_n():
    x = np.random.default_rng(0).standard_normal(4000)
    ess = effective_sample_size(x)
    assert 2000 < ess <= 4100


def test_ess_constant_sequence():
    assert effective_sample_size(np.ones(50)) == 50.0


def test_ess_ar1_scaling():
    rng = np.random.default_rng(1)
    phi = 0.9
    n = 20_000
    x = np.empty(n)
    x[0] = 0.0
    eps = rng.standard_normal(n)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + eps[i]
    # theoretical ESS factor (1-phi)/(1+phi) ~ 0.0526
    ess = effective_sample_size(x)
    expect = n * (1 - phi) / (1 + phi)
    assert 0.5 * expect < ess < 2.0 * expect


# ----------------------------------------------------------------- fit_model2

FAST = McmcConfig(n_iter=2000, burn_in=500, thin=3)


def test_fit_requires_enough_regions():
    y, n, dm = _toy_data(seed=7, m=4)
    with pytest.raises(ValueError, match="at least 5"):
        fit_model2(y, n, dm, PriorSpec(10), config=FAST, seed=0)


def test_fit_rejects_all_zero_counts():
    y, n, dm = _toy_data(seed=8, m=6)
    with pytest.raises(ValueError, match="zero"):
        fit_model2(np.zeros(6), n, dm, PriorSpec(10), config=FAST, seed=0)


def test_fit_deterministic():
    y, n, dm = _toy_data(seed=9, m=6)
    a = fit_model2(y, n, dm, PriorSpec(10), config=FAST, seed=1234)
    b = fit_model2(y, n, dm, PriorSpec(10), config=FAST, seed=1234)
    assert np.array_equal(a.beta, b.beta)
    assert np.array_equal(a.sigma, b.sigma)
    assert np.array_equal(a.rho, b.rho)


def test_fit_intercept_recovery_model1_data():
    # independent Poisson data: beta posterior should center on log(Y_G/N_G)
    rng = np.random.default_rng(10)
    m = 16
    pts = rng.uniform(0, 100, (m, 2))
    dm = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    n = rng.uniform(5_000, 50_000, m)
    beta_true = -4.0
    y = rng.poisson(n * math.exp(beta_true)).astype(float)
    fit = fit_model2(y, n, dm, PriorSpec(20), config=FAST, seed=11)
    mle = math.log(y.sum() / n.sum())
    beta_sd = fit.beta.std(ddof=1)
    assert abs(fit.beta.mean() - mle) < 3 * beta_sd


def test_fit_draw_count_and_summaries():
    y, n, dm = _toy_data(seed=12, m=6)
    fit = fit_model2(y, n, dm, PriorSpec(8), config=FAST, seed=2)
    assert fit.n_draws == (2000 - 500) // 3
    assert fit.z.shape == (fit.n_draws, 6)
    assert set(fit.acceptance) == {"z", "beta", "sigma", "ridge", "scale"}
    assert all(0.0 <= v <= 1.0 for v in fit.acceptance.values())
    lo, hi = fit.credible_interval("sigma", 0.9)
    assert lo <= fit.sigma.mean() <= hi or lo <= np.median(fit.sigma) <= hi
    summary = fit.summary()
    assert "rho_boundary_fraction" in summary
    assert summary["beta"]["quantiles"]["0.5"] == pytest.approx(
        float(np.quantile(fit.beta, 0.5)))


def test_fit_rho_stays_on_grid():
    y, n, dm = _toy_data(seed=13, m=6)
    fit = fit_model2(y, n, dm, PriorSpec(7), config=FAST, seed=3)
    assert set(np.unique(fit.rho)) <= set(range(1, 8))


def test_posterior_means_snapping():
    y, n, dm = _toy_data(seed=14, m=6)
    fit = fit_model2(y, n, dm, PriorSpec(7), config=FAST, seed=4)
    b, s, r, r_grid = posterior_means(fit)
    assert b == pytest.approx(fit.beta.mean())
    assert s == pytest.approx(fit.sigma.mean())
    assert r == pytest.approx(fit.rho.mean())
    assert r_grid == round(r) and 1 <= r_grid <= 7


def test_posterior_means_two_draw_average():
    fit = ModelIIFit(
        beta=np.array([-1.0, -3.0]), sigma=np.array([1.0, 2.0]),
        rho=np.array([4.0, 4.0]), z=np.zeros((2, 5)),
        acceptance={}, ess={}, config=FAST, prior=PriorSpec(10), nu=1.0, seed=0,
    )
    b, s, r, r_grid = posterior_means(fit)
    assert (b, s, r, r_grid) == (-2.0, 1.5, 4.0, 4.0)
