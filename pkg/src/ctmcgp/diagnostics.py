"""Summaries of MCMC output: effective sample size, MCSE, HPD intervals, error against truth."""

from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = [
    "autocorrelation", "effective_sample_size", "mcse", "hpdi",
    "draw_rmse", "PosteriorSummary", "summarize",
]


def autocorrelation(x):
    """Sample autocorrelation at all lags via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    f = np.fft.rfft(x, n=2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n]
    if acov[0] == 0:
        return np.r_[1.0, np.zeros(n - 1)]
    return acov / acov[0]


def effective_sample_size(x):
    """ESS with Geyer's initial monotone sequence estimator."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    rho = autocorrelation(x)
    if np.all(rho[1:] == 0) and np.var(x) == 0:
        return float(n)
    m = (n - 1) // 2
    pairs = rho[0:2 * m:2] + rho[1:2 * m + 1:2]
    positive = np.flatnonzero(pairs <= 0)
    k = positive[0] if positive.size else pairs.size
    gamma = np.minimum.accumulate(pairs[:k])
    tau = -1.0 + 2.0 * gamma.sum()
    return float(n / max(tau, 1.0 / np.log10(max(n, 10))))


def mcse(x):
    """Monte-Carlo standard error of the mean, ``sd / sqrt(ESS)``."""
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1) / np.sqrt(effective_sample_size(x))) if x.size > 1 else np.inf


def hpdi(draws, mass=0.95):
    """Shortest interval containing ``ceil(mass * n)`` of the sorted draws."""
    x = np.sort(np.asarray(draws, dtype=float))
    n = x.size
    if n == 0:
        raise InputError("hpdi needs at least one draw")
    if not 0 < mass <= 1:
        raise InputError("mass must lie in (0, 1]")
    k = max(int(np.ceil(mass * n)), 1)
    widths = x[k - 1:] - x[:n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def draw_rmse(draws, truth):
    """Root mean square error of each draw (row) against ``truth``."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    return np.sqrt(np.mean((draws - np.asarray(truth, dtype=float)) ** 2, axis=1))


@dataclass(frozen=True)
class PosteriorSummary:
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    ess: np.ndarray
    rmse_draws: np.ndarray = None
    coverage: float = None
    median_rmse: float = None
    rmse_of_median: float = None


def summarize(draws, truth=None, mass=0.95):
    """Per-coordinate medians, HPD intervals and ESS; error against ``truth`` when given.

    ``median_rmse`` is the median over draws of the draw-wise RMSE,
    ``rmse_of_median`` the RMSE of the coordinate-wise posterior median, and
    ``coverage`` the fraction of coordinates whose interval contains the truth.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    intervals = np.array([hpdi(col, mass) for col in draws.T]).reshape(-1, 2)
    ess = np.array([effective_sample_size(col) for col in draws.T])
    med = np.median(draws, axis=0)
    if truth is None:
        return PosteriorSummary(med, intervals[:, 0], intervals[:, 1], ess)
    truth = np.asarray(truth, dtype=float)
    errs = draw_rmse(draws, truth)
    inside = (intervals[:, 0] <= truth) & (truth <= intervals[:, 1])
    return PosteriorSummary(med, intervals[:, 0], intervals[:, 1], ess,
                            rmse_draws=errs, coverage=float(inside.mean()),
                            median_rmse=float(np.median(errs)),
                            rmse_of_median=float(draw_rmse(med, truth)[0]))
