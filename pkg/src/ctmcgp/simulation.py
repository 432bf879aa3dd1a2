"""Synthetic truths, covariates and datasets, and the prior-comparison harness."""

from dataclasses import dataclass

import numpy as np

from .ctmc import (
    ObservationSequence, PairIndex, build_rate_matrix, normalize, simulate_tip_data,
    transition_matrices,
)
from .diagnostics import summarize
from .errors import InputError
from .gp import CovariateSet
from .likelihood import TipData
from .models import (
    CTMCLikelihood, GPTarget, LogLinearTarget, SequentialData, TreeData,
    normalized_log_rates,
)
from .sampler import run_chain
from .tree import yule_tree

__all__ = [
    "l1_covariate", "uniform_distance_covariate", "quadratic_truth", "log_l1_truth",
    "simulate_sequence", "SimulatedData", "simulate_dataset", "build_target",
    "FitSummary", "fit", "compare_priors",
]


def l1_covariate(S):
    """``x_ij = -|i - j|`` in pair order."""
    pairs = PairIndex(S)
    return np.array([-abs(i - j) for i, j in pairs.pairs()], dtype=float)


def uniform_distance_covariate(S, rng, high=3.0):
    """``x_ij = |u_i - u_j|`` for state positions ``u ~ Uniform(0, high)``."""
    u = rng.uniform(0.0, high, size=S)
    pairs = PairIndex(S)
    return np.array([abs(u[i] - u[j]) for i, j in pairs.pairs()])


def quadratic_truth(x, a, b, c):
    x = np.asarray(x, dtype=float)
    return a + b * x + c * x * x


def log_l1_truth(x):
    """``log(x + max|x| + 1)``, positive-argument log of a covariate."""
    x = np.asarray(x, dtype=float)
    return np.log(x + np.max(np.abs(x)) + 1.0)


def simulate_sequence(rates, n_obs, mean_interval, rng):
    """Discretely observed chain at exponential gaps; starts from ``pi_init``."""
    G = rates.generator
    S = G.shape[0]
    gaps = rng.exponential(mean_interval, size=n_obs - 1)
    times = np.concatenate([[0.0], np.cumsum(gaps)])
    x = np.empty(n_obs, dtype=np.int64)
    x[0] = rng.choice(S, p=rates.pi_init)
    P = transition_matrices(G, gaps)
    for k in range(1, n_obs):
        row = np.clip(P[k - 1, x[k - 1]], 0, None)
        x[k] = rng.choice(S, p=row / row.sum())
    return ObservationSequence(x, times)


@dataclass(frozen=True)
class SimulatedData:
    S: int
    covariates: CovariateSet
    theta: np.ndarray
    rates: object
    tree: object = None
    tips: TipData = None
    obs: ObservationSequence = None

    @property
    def log_lambda(self):
        return np.log(PairIndex(self.S).from_matrix(self.rates.normalized))


def simulate_dataset(S, rng, model="tree", truth="quadratic", covariate="uniform-distance",
                     quad=(-0.5, 2.0, -0.8), covariate_high=3.0, n_tips=100, tree_height=5.0,
                     n_obs=200, obs_interval=0.3, tree=None, covariate_values=None,
                     theta=None, pi=None, pi_init=None):
    """Draw covariates, build the true rates, then simulate tip or sequential data."""
    if covariate_values is not None:
        x = np.asarray(covariate_values, dtype=float)
    elif covariate == "l1":
        x = l1_covariate(S)
    elif covariate == "uniform-distance":
        x = uniform_distance_covariate(S, rng, covariate_high)
    else:
        raise InputError(f"covariate generator {covariate!r} needs covariate values")
    if theta is None:
        if truth == "quadratic":
            theta = quadratic_truth(x, *quad)
        elif truth == "log-L1":
            theta = log_l1_truth(x)
        else:
            raise InputError("custom truth needs explicit theta values")
    theta = np.asarray(theta, dtype=float)
    rates = normalize(build_rate_matrix(theta, S=S, pi=pi, pi_init=pi_init))
    covs = CovariateSet(("x",), x[None, :])
    if model == "tree":
        tree = yule_tree(n_tips, rng, height=tree_height) if tree is None else tree
        seed = int(rng.integers(2 ** 63))
        tips = simulate_tip_data(rates, tree, rng_seed=seed)
        return SimulatedData(S, covs, theta, rates, tree=tree,
                             tips=TipData._checked([tips[k] for k in range(tree.n_tips)], S))
    obs = simulate_sequence(rates, n_obs, obs_interval, rng)
    return SimulatedData(S, covs, theta, rates, obs=obs)


def build_target(prior, likelihood, covariates, hyper_priors=None, kernel="se", whitened=True,
                 coef_sd=10.0):
    if prior == "gp":
        return GPTarget(likelihood, covariates, hyper_priors, kernel, whitened)
    if prior == "loglinear":
        return LogLinearTarget(likelihood, covariates, coef_sd)
    raise InputError(f"unknown prior {prior!r}")


@dataclass(frozen=True)
class FitSummary:
    prior: str
    chain: object
    summary: object
    log_lambda_draws: np.ndarray


def fit(data, prior, hmc, hyper_priors=None, method="approx", truth=None):
    """Run one chain on simulated data and summarize normalized log-rates against ``truth``."""
    if data.tree is not None:
        lik_data = TreeData(data.tree, data.tips.states)
    else:
        lik_data = SequentialData(data.obs)
    lik = CTMCLikelihood(lik_data, data.S, data.rates.pi, data.rates.pi_init, method=method)
    target = build_target(prior, lik, data.covariates, hyper_priors)
    chain = run_chain(hmc, target)
    draws = np.array([normalized_log_rates(t, data.rates.pi) for t in chain.thetas()])
    truth = data.log_lambda if truth is None else truth
    return FitSummary(prior, chain, summarize(draws, truth), draws)


def compare_priors(data, hmc, priors=("gp", "loglinear"), hyper_priors=None, method="approx"):
    """Fit each prior to the same data with the same sampler settings."""
    return {p: fit(data, p, hmc, hyper_priors, method) for p in priors}
