import numpy as np
import pytest
from scipy import stats

from ctmcgp.diagnostics import (
    autocorrelation, draw_rmse, effective_sample_size, hpdi, mcse, summarize,
)
from ctmcgp.errors import InputError
from ctmcgp.gp import CovariateSet, KernelHyper, build_gp_prior, sample_gp_prior


def ar1(n, rho, rng):
    x = np.empty(n)
    x[0] = rng.standard_normal()
    e = rng.standard_normal(n) * np.sqrt(1 - rho ** 2)
    for k in range(1, n):
        x[k] = rho * x[k - 1] + e[k]
    return x


def test_autocorrelation_lag_zero(rng):
    acf = autocorrelation(rng.standard_normal(500))
    assert acf[0] == pytest.approx(1.0)


def test_ess_iid(rng):
    assert effective_sample_size(rng.standard_normal(20_000)) == pytest.approx(20_000, rel=0.1)


def test_ess_ar1(rng):
    rho = 0.8
    n = 50_000
    expected = n * (1 - rho) / (1 + rho)
    assert effective_sample_size(ar1(n, rho, rng)) == pytest.approx(expected, rel=0.15)


def test_mcse_iid(rng):
    x = rng.standard_normal(10_000)
    assert mcse(x) == pytest.approx(x.std(ddof=1) / 100, rel=0.1)


def test_hpdi_shortest():
    draws = np.array([0.0, 0.1, 0.2, 0.3, 5.0])
    assert hpdi(draws, 0.8) == (0.0, 0.3)


def test_hpdi_normal(rng):
    lo, hi = hpdi(rng.standard_normal(200_000), 0.95)
    assert lo == pytest.approx(-1.96, abs=0.03)
    assert hi == pytest.approx(1.96, abs=0.03)


def test_hpdi_skewed_is_shorter_than_central(rng):
    x = rng.exponential(size=50_000)
    lo, hi = hpdi(x, 0.9)
    c_lo, c_hi = np.quantile(x, [0.05, 0.95])
    assert hi - lo < c_hi - c_lo
    assert lo == pytest.approx(0.0, abs=0.01)


def test_hpdi_validation():
    with pytest.raises(InputError):
        hpdi([], 0.9)
    with pytest.raises(InputError):
        hpdi([1.0], 0.0)


def test_degenerate_chain():
    draws = np.tile([0.5, -1.0], (50, 1))
    s = summarize(draws, truth=np.array([0.0, 0.0]))
    np.testing.assert_array_equal(s.upper - s.lower, 0.0)
    assert s.rmse_of_median == pytest.approx(np.sqrt((0.25 + 1.0) / 2))
    np.testing.assert_allclose(s.rmse_draws, s.rmse_of_median)
    assert s.coverage == 0.0


def test_draw_rmse():
    np.testing.assert_allclose(draw_rmse([[1.0, 1.0], [0.0, 2.0]], [0.0, 0.0]), [1.0, np.sqrt(2)])


def test_prior_only_coverage_is_calibrated(rng):
    # prior draws cover an independent prior draw 95% of the time; one
    # coordinate per replicate keeps the hits independent
    x = rng.uniform(0, 8, size=(1, 20))
    prior = build_gp_prior(CovariateSet(("x",), x), [KernelHyper(1.0, 1.0)])
    n_rep = 1000
    hits = 0
    for r in range(n_rep):
        k = r % prior.dim
        draws = sample_gp_prior(prior, rng, size=4000)[:, k]
        lo, hi = hpdi(draws, 0.95)
        hits += lo <= sample_gp_prior(prior, rng)[k] <= hi
    assert stats.binomtest(int(hits), n_rep, 0.95).pvalue > 1e-3
