import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ctmcgp.errors import InputError, NumericalError
from ctmcgp.gp import (
    CovariateSet, HyperPrior, KernelHyper, additive_kernel, build_gp_prior,
    gp_logdensity_and_grad, hyper_logprior, kernel_matrix, prior_medians, sample_gp_prior,
)


def dense_mvn_logpdf(theta, C):
    # explicit inverse and determinant
    sign, logdet = np.linalg.slogdet(C)
    assert sign > 0
    return -0.5 * (theta @ np.linalg.inv(C) @ theta + logdet + theta.size * math.log(2 * math.pi))


def covariates_for(S, rng, count=1):
    # spread wide enough that the covariance stays well conditioned for dense oracles
    dim = S * S - S
    return CovariateSet(tuple(f"c{p}" for p in range(count)), rng.uniform(0, 0.6 * dim, size=(count, dim)))


def test_kernel_zero_distance():
    K = kernel_matrix(np.array([1.5, 1.5]), KernelHyper(2.3, 0.7))
    np.testing.assert_allclose(K, 2.3)


def test_kernel_unit_distance():
    K = kernel_matrix(np.array([0.0, 1.0]), KernelHyper(1.0, 1.0))
    assert K[0, 1] == pytest.approx(0.6065307, abs=1e-7)


def test_matern_kernel_values():
    K = kernel_matrix(np.array([0.0, 1.0]), KernelHyper(1.0, 1.0), kind="matern52")
    r = math.sqrt(5.0)
    assert K[0, 1] == pytest.approx((1 + r + r * r / 3) * math.exp(-r), rel=1e-14)
    assert K[0, 0] == 1.0


def test_kernel_rejects_nonpositive_hypers():
    with pytest.raises(InputError):
        KernelHyper(0.0, 1.0)
    with pytest.raises(InputError):
        KernelHyper(1.0, -2.0)
    with pytest.raises(InputError):
        kernel_matrix(np.zeros(2), KernelHyper(1, 1), kind="rq")


def test_additive_kernel():
    K = kernel_matrix(np.array([0.0, 0.4, 2.0]), KernelHyper(1.0, 1.0))
    np.testing.assert_array_equal(additive_kernel([K]), K)
    np.testing.assert_allclose(additive_kernel([K, K]), 2 * K)
    with pytest.raises(InputError):
        additive_kernel([K, np.eye(2)])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 20))
def test_kernel_symmetric_and_positive_after_jitter(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 3, size=n).astype(float)  # repeated values make K singular
    K = kernel_matrix(x, KernelHyper(rng.uniform(0.1, 3), rng.uniform(0.1, 3)))
    np.testing.assert_array_equal(K, K.T)
    S = 2
    while S * S - S < n:
        S += 1
    vals = np.resize(x, S * S - S)
    prior = build_gp_prior(CovariateSet(("x",), vals[None]), [KernelHyper(1.0, 1.0)])
    assert np.all(np.linalg.eigvalsh(prior.covariance) > 0)


def test_standard_normal_density():
    prior = build_gp_prior(CovariateSet(("x",), np.array([[0.0, 50.0]])), [KernelHyper(1.0, 1e-3)])
    lp, g = gp_logdensity_and_grad(np.zeros(2), prior)
    assert lp / 2 == pytest.approx(-0.9189385, abs=1e-6)
    np.testing.assert_array_equal(g, 0.0)


@pytest.mark.parametrize("S", [2, 3, 4, 6])
def test_density_matches_dense_oracle(S, rng):
    covs = covariates_for(S, rng, count=2)
    prior = build_gp_prior(covs, [KernelHyper(1.3, 0.8), KernelHyper(0.5, 2.0)])
    assert np.linalg.cond(prior.covariance) < 1e6
    theta = sample_gp_prior(prior, rng)
    lp, g = gp_logdensity_and_grad(theta, prior)
    assert lp == pytest.approx(dense_mvn_logpdf(theta, prior.covariance), abs=1e-8)
    np.testing.assert_allclose(g, -np.linalg.solve(prior.covariance, theta), rtol=1e-6, atol=1e-8)


def test_density_matches_scipy(rng):
    prior = build_gp_prior(covariates_for(3, rng), [KernelHyper(2.0, 0.5)])
    assert np.linalg.cond(prior.covariance) < 1e6
    theta = sample_gp_prior(prior, rng)
    expected = stats.multivariate_normal(np.zeros(6), prior.covariance).logpdf(theta)
    assert gp_logdensity_and_grad(theta, prior)[0] == pytest.approx(expected, abs=1e-8)


def test_jitter_escalates_for_repeated_covariates():
    covs = CovariateSet(("x",), np.array([[1.0, 1.0, 2.0, 2.0, 1.0, 1.0]]))
    prior = build_gp_prior(covs, [KernelHyper(1.0, 1.0)])
    assert prior.jitter >= 1e-8
    np.testing.assert_allclose(prior.chol @ prior.chol.T, prior.covariance, atol=1e-12)


def test_jitter_exhausted(monkeypatch):
    import ctmcgp.gp as gp
    monkeypatch.setattr(gp, "JITTER_MAX", 1e-20)
    monkeypatch.setattr(gp, "JITTER_START", 1e-20)
    covs = CovariateSet(("x",), np.array([[1.0, 1.0]]))
    with pytest.raises(NumericalError):
        build_gp_prior(covs, [KernelHyper(1.0, 1.0)])


def test_density_rejects_wrong_dimension(rng):
    prior = build_gp_prior(covariates_for(3, rng), [KernelHyper(1.0, 1.0)])
    with pytest.raises(InputError):
        gp_logdensity_and_grad(np.zeros(5), prior)


def test_covariate_set_validation():
    with pytest.raises(InputError):
        CovariateSet(("a",), np.zeros((1, 5)))
    with pytest.raises(InputError):
        CovariateSet(("a", "b"), np.zeros((1, 6)))
    with pytest.raises(InputError):
        CovariateSet(("a",), np.array([[0.0, np.nan]]))
    c = CovariateSet(("a",), np.zeros((1, 12)))
    assert (c.S, c.dim, c.count) == (4, 12, 1)


def test_hyper_logprior_examples():
    assert hyper_logprior([KernelHyper(1.0, 1.0)], [HyperPrior(1.0, 1.0)]) == pytest.approx(-2.0)
    # the sigma2 and ell terms separately
    sig = hyper_logprior([KernelHyper(1.0, 1.0)], [HyperPrior(1.0, 1e-300)]) - math.log(1e-300)
    assert sig == pytest.approx(-1.0, abs=1e-12)
    floored = hyper_logprior([KernelHyper(1e-300, 2.0)], [HyperPrior(1.0, 2.0, ell_floor=1.0)])
    assert floored - math.log(1.0) == pytest.approx(-1.3068528, abs=1e-7)


def test_hyper_logprior_floor_violation():
    assert hyper_logprior([KernelHyper(1.0, 0.5)], [HyperPrior(1.0, 1.0, ell_floor=1.0)]) == -math.inf


def test_hyper_prior_validation():
    with pytest.raises(InputError):
        HyperPrior(0.0, 1.0)
    with pytest.raises(InputError):
        HyperPrior(1.0, 1.0, ell_floor=0.0)


def test_prior_medians():
    (m,) = prior_medians([HyperPrior(2.0, 0.5, ell_floor=1.0)])
    assert m.marginal_scale == pytest.approx(math.log(2) / 2)
    assert m.length_scale == pytest.approx(1.0 + 2 * math.log(2))


def test_prior_samples_have_prior_covariance(rng):
    prior = build_gp_prior(covariates_for(3, rng), [KernelHyper(1.0, 1.0)])
    draws = sample_gp_prior(prior, rng, size=40_000)
    np.testing.assert_allclose(np.cov(draws.T), prior.covariance, atol=0.05)


def test_prior_draws_have_finite_density(rng):
    x = rng.integers(0, 3, size=(1, 56)).astype(float)
    prior = build_gp_prior(CovariateSet(("x",), x), [KernelHyper(1.0, 1.0)])
    draws = sample_gp_prior(prior, rng, size=10_000)
    assert all(np.isfinite(gp_logdensity_and_grad(d, prior)[0]) for d in draws)


def test_cholesky_reproduces_covariance(rng):
    prior = build_gp_prior(covariates_for(5, rng, count=2), [KernelHyper(1.0, 0.5), KernelHyper(2.0, 3.0)])
    C = prior.covariance
    np.testing.assert_allclose(prior.chol @ prior.chol.T, C, rtol=1e-8, atol=1e-8 * np.abs(C).max())


def test_prior_gradient_matches_finite_differences(rng):
    from ctmcgp.gradients import central_difference_grad
    prior = build_gp_prior(covariates_for(3, rng), [KernelHyper(1.5, 0.5)])
    theta = sample_gp_prior(prior, rng)
    _, g = gp_logdensity_and_grad(theta, prior)
    fd = central_difference_grad(lambda t: gp_logdensity_and_grad(t, prior)[0], theta)
    np.testing.assert_allclose(g, fd.values, rtol=1e-6, atol=1e-8)
