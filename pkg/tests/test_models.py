import numpy as np
import pytest

from ctmcgp.ctmc import ObservationSequence
from ctmcgp.errors import InputError
from ctmcgp.gp import CovariateSet, HyperPrior, build_gp_prior, gp_logdensity_and_grad
from ctmcgp.gradients import central_difference_grad
from ctmcgp.models import (
    CTMCLikelihood, GPTarget, HyperOnlyTarget, LogLinearTarget, SequentialData, TreeData,
    normalized_log_rates,
)
from ctmcgp.simulation import l1_covariate
from ctmcgp.tree import yule_tree


def tree_likelihood(rng, S=3, n=8, method="exact"):
    tree = yule_tree(n, rng, height=1.0)
    return CTMCLikelihood(TreeData(tree, rng.integers(0, S, n)), S, method=method)


def covs(S):
    return CovariateSet(("d",), l1_covariate(S)[None])


def test_normalized_log_rates_shift_invariant(rng):
    theta = rng.normal(size=6)
    np.testing.assert_allclose(normalized_log_rates(theta + 2.5), normalized_log_rates(theta), atol=1e-12)


def test_likelihood_off_is_zero():
    lik = CTMCLikelihood(None, 3)
    assert lik.loglik(np.zeros(6)) == 0.0
    ll, g = lik.loglik_and_grad(np.zeros(6))
    assert ll == 0.0 and g.shape == (6,)


def test_loglik_and_grad_matches_central(rng):
    lik = tree_likelihood(rng)
    theta = rng.normal(0, 0.5, 6)
    ll, g = lik.loglik_and_grad(theta)
    assert ll == pytest.approx(lik.loglik(theta))
    np.testing.assert_allclose(g, central_difference_grad(lik.loglik, theta).values, rtol=1e-6, atol=1e-8)


def test_sequential_likelihood(rng):
    obs = ObservationSequence((0, 1, 1, 0), (0.0, 0.5, 0.9, 2.0))
    lik = CTMCLikelihood(SequentialData(obs), 2, method="exact")
    theta = np.array([0.2, -0.4])
    _, g = lik.loglik_and_grad(theta)
    np.testing.assert_allclose(g, central_difference_grad(lik.loglik, theta).values, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("whitened", [True, False])
def test_gp_surrogate_gradient_is_posterior_gradient(whitened, rng):
    lik = tree_likelihood(rng)
    target = GPTarget(lik, covs(3), whitened=whitened)
    pos, lh = target.initial(rng)
    g = target.surrogate_grad(pos, lh)
    fd = central_difference_grad(lambda x: target.log_posterior(x, lh), pos)
    np.testing.assert_allclose(g, fd.values, rtol=1e-5, atol=1e-7)


def test_gp_log_posterior_parts(rng):
    lik = tree_likelihood(rng)
    target = GPTarget(lik, covs(3))
    pos, lh = target.initial(rng)
    theta = target.theta(pos, lh)
    prior = build_gp_prior(covs(3), target.kernel_hypers(lh))
    hyper = -np.exp(lh).sum()  # exponential(1) log densities
    assert target.log_posterior(pos, lh) == pytest.approx(
        lik.loglik(theta) + gp_logdensity_and_grad(theta, prior)[0] + hyper, rel=1e-12)


def test_gp_reposition_round_trip(rng):
    target = GPTarget(tree_likelihood(rng), covs(3))
    pos, lh = target.initial(rng)
    theta = target.theta(pos, lh)
    np.testing.assert_allclose(target.theta(target.reposition(theta, lh), lh), theta, atol=1e-10)


def test_gp_floor_blocks_hypers(rng):
    target = GPTarget(tree_likelihood(rng), covs(3), [HyperPrior(1.0, 1.0, ell_floor=1.0)])
    pos, lh = target.initial(rng)
    bad = lh.copy()
    bad[1] = np.log(0.5)
    assert target.hyper_log_target(target.theta(pos, lh), bad) == -np.inf


def test_gp_rejects_mismatched_covariates(rng):
    with pytest.raises(InputError):
        GPTarget(tree_likelihood(rng), covs(4))


def test_gp_hyper_names(rng):
    assert GPTarget(tree_likelihood(rng), covs(3)).hyper_names == ("sigma2_d", "ell_d")


def test_loglinear_theta_is_linear_in_covariate(rng):
    target = LogLinearTarget(tree_likelihood(rng), covs(3))
    theta = target.theta(np.array([0.4, 1.2]), np.zeros(0))
    x = l1_covariate(3)
    slope, intercept = np.polyfit(x, theta, 1)
    np.testing.assert_allclose(theta, intercept + slope * x, atol=1e-12)


def test_loglinear_gradient(rng):
    target = LogLinearTarget(tree_likelihood(rng), covs(3))
    b = np.array([0.3, -0.7])
    fd = central_difference_grad(lambda x: target.log_posterior(x, np.zeros(0)), b)
    np.testing.assert_allclose(target.surrogate_grad(b, np.zeros(0)), fd.values, rtol=1e-6, atol=1e-8)


def test_hyper_only_target():
    t = HyperOnlyTarget([HyperPrior()])
    pos, lh = t.initial(np.random.default_rng(0))
    assert pos.size == 0 and lh.size == 2
    np.testing.assert_allclose(np.exp(lh), np.log(2))
    assert t.log_posterior(pos, lh) == pytest.approx(-2 * np.log(2))
