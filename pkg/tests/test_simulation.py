import numpy as np
import pytest

from ctmcgp.ctmc import PairIndex
from ctmcgp.sampler import HMCConfig
from ctmcgp.simulation import (
    compare_priors, l1_covariate, log_l1_truth, quadratic_truth, simulate_dataset,
    simulate_sequence, uniform_distance_covariate,
)
from ctmcgp.ctmc import build_rate_matrix, normalize


def test_l1_covariate():
    np.testing.assert_array_equal(l1_covariate(3), [-1, -2, -1, -1, -2, -1])


def test_uniform_distance_is_symmetric(rng):
    x = uniform_distance_covariate(5, rng)
    M = PairIndex(5).to_matrix(x)
    np.testing.assert_allclose(M, M.T)
    assert np.all(x >= 0) and np.all(x <= 3)


def test_truths():
    np.testing.assert_allclose(quadratic_truth([0.0, 1.0], 1.0, 2.0, 3.0), [1.0, 6.0])
    x = l1_covariate(4)
    t = log_l1_truth(x)
    assert np.all(np.isfinite(t)) and t.min() == pytest.approx(0.0)


def test_simulated_sequence_shape(rng):
    r = normalize(build_rate_matrix(np.zeros(6)))
    obs = simulate_sequence(r, 50, 0.3, rng)
    assert len(obs) == 50 and obs.times[0] == 0.0
    assert np.all(obs.intervals > 0)


def test_dataset_is_reproducible():
    a = simulate_dataset(4, np.random.default_rng(1), n_tips=20)
    b = simulate_dataset(4, np.random.default_rng(1), n_tips=20)
    np.testing.assert_array_equal(a.tips.states, b.tips.states)
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_allclose(a.log_lambda, a.theta - np.log(a.rates.beta))


def test_compare_priors_smoke(rng):
    data = simulate_dataset(3, rng, model="sequential", n_obs=60)
    fits = compare_priors(data, HMCConfig(warmup_iterations=40, iterations=60, leapfrog_steps=8,
                                          step_size=0.05))
    for f in fits.values():
        assert f.log_lambda_draws.shape == (60, 6)
        assert 0.0 <= f.summary.coverage <= 1.0
        assert np.isfinite(f.summary.rmse_of_median)


def test_log_l1_example():
    theta = log_l1_truth(l1_covariate(4))
    # pair (2, 3) in 1-based labels is (1, 2) in 0-based indices
    assert theta[PairIndex(4).index(1, 2)] == pytest.approx(1.0986123, abs=1e-7)


@pytest.mark.slow
def test_acceptance_rate_on_study_configuration():
    data = simulate_dataset(8, np.random.default_rng(7000), model="tree", n_tips=100, tree_height=5.0)
    fits = compare_priors(data, HMCConfig(step_size=0.05, leapfrog_steps=20, warmup_iterations=500,
                                          iterations=500, hyper_scale=0.3))
    for f in fits.values():
        assert 0.4 <= f.chain.accept_rate <= 0.9
