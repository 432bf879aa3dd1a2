"""Posterior targets for the sampler.

A target couples a likelihood on log-rates ``theta`` with a prior and a
sampling parameterization ("position"). The sampler only talks to the
methods of :class:`Target`:

* ``theta(position, log_hypers)`` maps a position to log-rates,
* ``log_posterior`` is exact (full matrix exponentials),
* ``surrogate_grad`` is the gradient used inside trajectories,
* ``hyper_log_target`` and ``reposition`` support hyperparameter updates
  with ``theta`` held fixed,
* ``whitened_hyper_log_target`` (when ``supports_whitened_hyper``) supports
  hyperparameter updates with the position held fixed.

Hyperparameters are handled on the log scale; ``log_posterior`` reports
the density of ``(theta, hypers)`` on their natural scale.
"""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .ctmc import build_rate_matrix, normalize, uniform
from .errors import InputError
from .gp import (
    HyperPrior, KernelHyper, build_gp_prior, gp_logdensity_and_grad,
    hyper_logprior, prior_medians,
)
from .gradients import chain_rule_to_theta, sequential_loglik_grad, tree_loglik_grad
from .likelihood import sequential_pass, tree_loglik
from .tree import Phylogeny

__all__ = [
    "TreeData", "SequentialData", "CTMCLikelihood",
    "Target", "GPTarget", "LogLinearTarget", "HyperOnlyTarget",
    "normalized_log_rates",
]


@dataclass(frozen=True)
class TreeData:
    tree: Phylogeny
    tips: np.ndarray
    root_dist: np.ndarray = None


@dataclass(frozen=True)
class SequentialData:
    obs: object


def normalized_log_rates(theta, pi=None):
    """``log lambda = theta - log beta``, the identifiable part of ``theta``."""
    theta = np.asarray(theta, dtype=float)
    rates = normalize(build_rate_matrix(theta, pi=pi))
    return theta - np.log(rates.beta)


class CTMCLikelihood:
    """Log-likelihood of ``theta`` for tree or sequential data.

    ``data=None`` switches the likelihood off (identically zero), which
    turns any target into its prior.
    """

    def __init__(self, data, S, pi=None, pi_init=None, method="approx", K=30):
        self.data = data
        self.S = S
        self.pi = uniform(S) if pi is None else np.asarray(pi, dtype=float)
        self.pi_init = uniform(S) if pi_init is None else np.asarray(pi_init, dtype=float)
        self.method = method
        self.K = K

    @property
    def enabled(self):
        return self.data is not None

    def rates(self, theta):
        return normalize(build_rate_matrix(theta, S=self.S, pi=self.pi, pi_init=self.pi_init))

    def loglik(self, theta):
        if self.data is None:
            return 0.0
        rates = self.rates(theta)
        if isinstance(self.data, TreeData):
            return tree_loglik(self.data.tree, self.data.tips, rates, self.data.root_dist)[0]
        return sequential_pass(self.data.obs, rates).loglik

    def loglik_and_grad(self, theta, method=None):
        """Log-likelihood and its ``theta`` gradient by ``method`` (default: the configured one)."""
        dim = self.S * self.S - self.S
        if self.data is None:
            return 0.0, np.zeros(dim)
        method = method or self.method
        rates = self.rates(theta)
        if isinstance(self.data, TreeData):
            ll, part = tree_loglik(self.data.tree, self.data.tips, rates, self.data.root_dist)
            if not np.isfinite(ll):
                return ll, np.full(dim, np.nan)
            g = tree_loglik_grad(self.data.tree, self.data.tips, rates, part, method, self.K)
        else:
            cache = sequential_pass(self.data.obs, rates)
            ll = cache.loglik
            if not np.isfinite(ll):
                return ll, np.full(dim, np.nan)
            g = sequential_loglik_grad(self.data.obs, rates, method, self.K, cache)
        return ll, chain_rule_to_theta(g, rates).values


class Target:
    """Interface used by the sampler; see the module docstring."""

    n_hypers = 0
    hyper_names = ()
    supports_whitened_hyper = False

    def theta(self, position, log_hypers):
        raise NotImplementedError

    def loglik(self, theta):
        raise NotImplementedError

    def log_prior(self, theta, log_hypers):
        raise NotImplementedError

    def log_posterior(self, position, log_hypers):
        theta = self.theta(position, log_hypers)
        lp = self.log_prior(theta, log_hypers)
        if not np.isfinite(lp):
            return -np.inf
        return self.loglik(theta) + lp

    def surrogate_grad(self, position, log_hypers):
        raise NotImplementedError

    def hyper_log_target(self, theta, log_hypers):
        """Log density of ``log_hypers`` given ``theta``, Jacobian included."""
        return self.log_prior(theta, log_hypers) + float(np.sum(log_hypers))

    def reposition(self, theta, log_hypers):
        raise NotImplementedError

    def initial(self, rng):
        raise NotImplementedError

    def hypers(self, log_hypers):
        return np.exp(np.asarray(log_hypers, dtype=float))


class GPTarget(Target):
    """Additive GP prior on ``theta`` with exponential hyperpriors.

    ``whitened=True`` samples ``z`` with ``theta = L z`` for the current
    Cholesky factor ``L``; this stays well conditioned when covariate values
    repeat across pairs and the covariance is nearly singular.
    ``whitened=False`` samples ``theta`` directly.
    """

    def __init__(self, likelihood, covariates, hyper_priors=None, kind="se", whitened=True):
        self.likelihood = likelihood
        self.covariates = covariates
        if covariates.S != likelihood.S:
            raise InputError(f"covariates describe {covariates.S} states, model has {likelihood.S}")
        self.hyper_priors = tuple(hyper_priors or [HyperPrior()] * covariates.count)
        if len(self.hyper_priors) != covariates.count:
            raise InputError("need one hyperprior per covariate")
        self.kind = kind
        self.whitened = whitened
        self.n_hypers = 2 * covariates.count
        self.hyper_names = tuple(
            f"{part}_{name}" for name in covariates.names for part in ("sigma2", "ell"))
        self._cache = OrderedDict()

    def kernel_hypers(self, log_hypers):
        h = np.exp(np.asarray(log_hypers, dtype=float)).reshape(-1, 2)
        return tuple(KernelHyper(s, l, pr.ell_floor) for (s, l), pr in zip(h, self.hyper_priors))

    def prior(self, log_hypers):
        key = tuple(np.asarray(log_hypers, dtype=float).tolist())
        prior = self._cache.get(key)
        if prior is None:
            prior = build_gp_prior(self.covariates, self.kernel_hypers(log_hypers), self.kind)
            self._cache[key] = prior
            if len(self._cache) > 4:
                self._cache.popitem(last=False)
        return prior

    def _hyper_lp(self, log_hypers):
        h = np.exp(np.asarray(log_hypers, dtype=float))
        if not np.all(np.isfinite(h) & (h > 0)):
            return -np.inf
        return hyper_logprior(self.kernel_hypers(log_hypers), self.hyper_priors)

    def theta(self, position, log_hypers):
        position = np.asarray(position, dtype=float)
        return self.prior(log_hypers).chol @ position if self.whitened else position

    def loglik(self, theta):
        return self.likelihood.loglik(theta)

    def log_prior(self, theta, log_hypers):
        hl = self._hyper_lp(log_hypers)
        if not np.isfinite(hl):
            return -np.inf
        return gp_logdensity_and_grad(theta, self.prior(log_hypers))[0] + hl

    def surrogate_grad(self, position, log_hypers):
        prior = self.prior(log_hypers)
        theta = self.theta(position, log_hypers)
        _, g = self.likelihood.loglik_and_grad(theta)
        if self.whitened:
            return prior.chol.T @ g - np.asarray(position)
        return g + gp_logdensity_and_grad(theta, prior)[1]

    def hyper_log_target(self, theta, log_hypers):
        if not np.isfinite(self._hyper_lp(log_hypers)):
            return -np.inf
        return super().hyper_log_target(theta, log_hypers)

    @property
    def supports_whitened_hyper(self):
        return self.whitened

    def whitened_hyper_log_target(self, position, log_hypers):
        """Log density of ``log_hypers`` given the whitened position ``z``, Jacobian included."""
        hl = self._hyper_lp(log_hypers)
        if not np.isfinite(hl):
            return -np.inf
        return self.loglik(self.theta(position, log_hypers)) + hl + float(np.sum(log_hypers))

    def reposition(self, theta, log_hypers):
        if not self.whitened:
            return np.array(theta, dtype=float)
        return solve_triangular(self.prior(log_hypers).chol, theta, lower=True)

    def initial(self, rng):
        log_hypers = np.log(np.array(
            [[h.marginal_scale, h.length_scale] for h in prior_medians(self.hyper_priors)]).ravel())
        z = rng.standard_normal(self.covariates.dim)
        theta = self.prior(log_hypers).chol @ z
        return self.reposition(theta, log_hypers), log_hypers


class LogLinearTarget(Target):
    """``theta = b0 + sum_p b_p x_p`` with standardized covariates and ``b ~ N(0, sd^2)``."""

    def __init__(self, likelihood, covariates, coef_sd=10.0):
        self.likelihood = likelihood
        x = covariates.values
        sd = x.std(axis=1, keepdims=True)
        sd[sd == 0] = 1.0
        self.design = np.column_stack([np.ones(x.shape[1]), ((x - x.mean(axis=1, keepdims=True)) / sd).T])
        self.coef_sd = coef_sd

    def theta(self, position, log_hypers):
        return self.design @ np.asarray(position, dtype=float)

    def loglik(self, theta):
        return self.likelihood.loglik(theta)

    def log_prior_coef(self, position):
        b = np.asarray(position, dtype=float)
        return float(-0.5 * b @ b / self.coef_sd ** 2
                     - b.size * (np.log(self.coef_sd) + 0.5 * np.log(2 * np.pi)))

    def log_prior(self, theta, log_hypers):
        # The prior lives on the coefficients; the design has full column rank.
        b, *_ = np.linalg.lstsq(self.design, theta, rcond=None)
        return self.log_prior_coef(b)

    def log_posterior(self, position, log_hypers):
        return self.loglik(self.theta(position, log_hypers)) + self.log_prior_coef(position)

    def surrogate_grad(self, position, log_hypers):
        _, g = self.likelihood.loglik_and_grad(self.theta(position, log_hypers))
        return self.design.T @ g - np.asarray(position) / self.coef_sd ** 2

    def reposition(self, theta, log_hypers):
        return np.linalg.lstsq(self.design, theta, rcond=None)[0]

    def initial(self, rng):
        return np.zeros(self.design.shape[1]), np.zeros(0)


class HyperOnlyTarget(Target):
    """Exponential hyperpriors alone: no ``theta``, no likelihood.

    Used to check that hyperparameter updates leave the hyperprior invariant.
    """

    def __init__(self, hyper_priors):
        self.hyper_priors = tuple(hyper_priors)
        self.n_hypers = 2 * len(self.hyper_priors)
        self.hyper_names = tuple(f"{k}_{p}" for p in range(len(self.hyper_priors)) for k in ("sigma2", "ell"))

    def theta(self, position, log_hypers):
        return np.zeros(0)

    def loglik(self, theta):
        return 0.0

    def log_prior(self, theta, log_hypers):
        h = np.exp(np.asarray(log_hypers, dtype=float)).reshape(-1, 2)
        return hyper_logprior([KernelHyper(s, l) for s, l in h], self.hyper_priors)

    def surrogate_grad(self, position, log_hypers):
        return np.zeros(0)

    def reposition(self, theta, log_hypers):
        return np.zeros(0)

    def initial(self, rng):
        meds = prior_medians(self.hyper_priors)
        return np.zeros(0), np.log([[h.marginal_scale, h.length_scale] for h in meds]).ravel()
