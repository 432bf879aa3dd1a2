"""Gaussian-process priors on log-rates indexed by pairwise covariates.

Each covariate assigns a real value to every ordered off-diagonal pair (in
pair order). The prior on ``theta`` is zero-mean Gaussian with covariance
``sum_p k_p(x_p, x_p)`` plus a small diagonal jitter.

Hyperparameters travel as a flat vector ``[sigma2_1, ell_1, sigma2_2, ell_2, ...]``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import InputError, NumericalError

__all__ = [
    "CovariateSet", "KernelHyper", "HyperPrior", "GPPrior",
    "kernel_matrix", "additive_kernel", "build_gp_prior",
    "gp_logdensity_and_grad", "hyper_logprior", "prior_medians",
    "sample_gp_prior", "KERNELS",
]

JITTER_START = 1e-8
JITTER_MAX = 1e-4
_LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class CovariateSet:
    """``values[p, k]`` is covariate ``p`` at pair ``k``."""

    names: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float)).copy()
        names = tuple(self.names)
        if values.shape[0] != len(names):
            raise InputError(f"{len(names)} covariate names for {values.shape[0]} value rows")
        if not np.all(np.isfinite(values)):
            raise InputError("covariate values must be finite")
        S = (1 + math.isqrt(1 + 4 * values.shape[1])) // 2
        if S * S - S != values.shape[1] or S < 2:
            raise InputError(f"{values.shape[1]} values per covariate is not S^2 - S for any S")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)

    @property
    def count(self):
        return len(self.names)

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def S(self):
        return (1 + math.isqrt(1 + 4 * self.dim)) // 2


@dataclass(frozen=True)
class KernelHyper:
    marginal_scale: float
    length_scale: float
    lower_bound_ell: float = None

    def __post_init__(self):
        if not (self.marginal_scale > 0 and self.length_scale > 0):
            raise InputError(
                f"kernel hyperparameters must be positive, got sigma2={self.marginal_scale}, "
                f"ell={self.length_scale}")


@dataclass(frozen=True)
class HyperPrior:
    """Independent exponential priors on ``sigma2`` and ``ell``.

    With ``ell_floor`` set, ``ell`` has a shifted exponential prior supported
    on ``[ell_floor, inf)``.
    """

    rate_scale: float = 1.0
    rate_length: float = 1.0
    ell_floor: float = None

    def __post_init__(self):
        if not (self.rate_scale > 0 and self.rate_length > 0):
            raise InputError("exponential prior rates must be positive")
        if self.ell_floor is not None and not self.ell_floor > 0:
            raise InputError("length-scale floor must be positive")


def _se(d2, hyper):
    return hyper.marginal_scale * np.exp(-0.5 * d2 / hyper.length_scale ** 2)


def _matern52(d2, hyper):
    r = np.sqrt(5.0 * d2) / hyper.length_scale
    return hyper.marginal_scale * (1.0 + r + r * r / 3.0) * np.exp(-r)


KERNELS = {"se": _se, "matern52": _matern52}


def kernel_matrix(x, hyper, kind="se"):
    """Stationary kernel on one covariate; ``K[a, b] = k(|x_a - x_b|)``."""
    if not isinstance(hyper, KernelHyper):
        hyper = KernelHyper(*hyper)
    try:
        kernel = KERNELS[kind]
    except KeyError:
        raise InputError(f"unknown kernel {kind!r}; expected one of {sorted(KERNELS)}") from None
    x = np.asarray(x, dtype=float)
    d2 = (x[:, None] - x[None, :]) ** 2
    K = kernel(d2, hyper)
    return 0.5 * (K + K.T)


def additive_kernel(kernels):
    kernels = [np.asarray(k, dtype=float) for k in kernels]
    if not kernels:
        raise InputError("additive_kernel needs at least one kernel")
    shape = kernels[0].shape
    for k in kernels[1:]:
        if k.shape != shape:
            raise InputError(f"kernel shapes differ: {shape} vs {k.shape}")
    return np.sum(kernels, axis=0)


@dataclass(frozen=True, eq=False)
class GPPrior:
    """A built prior: covariance with jitter and its lower Cholesky factor."""

    covariates: CovariateSet
    hypers: tuple
    kind: str
    jitter: float
    covariance: np.ndarray
    chol: np.ndarray

    @property
    def dim(self):
        return self.covariance.shape[0]

    @property
    def log_det(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def build_gp_prior(covariates, hypers, kind="se"):
    """Assemble the additive covariance and factor it, escalating jitter as needed.

    Jitter starts at ``1e-8`` times the mean prior variance and grows by
    factors of 10 up to ``1e-4`` times it.
    """
    hypers = tuple(h if isinstance(h, KernelHyper) else KernelHyper(*h) for h in hypers)
    if len(hypers) != covariates.count:
        raise InputError(f"{len(hypers)} kernel hyperparameter sets for {covariates.count} covariates")
    K = additive_kernel([kernel_matrix(x, h, kind) for x, h in zip(covariates.values, hypers)])
    scale = float(np.mean(np.diag(K)))
    eye = np.eye(K.shape[0])
    rel = JITTER_START
    while rel <= JITTER_MAX * (1 + 1e-9):
        C = K + rel * scale * eye
        try:
            L = np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            rel *= 10
            continue
        C.flags.writeable = False
        L.flags.writeable = False
        return GPPrior(covariates, hypers, kind, rel * scale, C, L)
    raise NumericalError(f"kernel matrix is not positive definite even with jitter {JITTER_MAX} x variance")


def gp_logdensity_and_grad(theta, prior):
    """``log N(theta; 0, C)`` and its gradient ``-C^{-1} theta``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (prior.dim,):
        raise InputError(f"theta has shape {theta.shape}, prior dimension is {prior.dim}")
    z = solve_triangular(prior.chol, theta, lower=True)
    logdens = -0.5 * (float(z @ z) + prior.log_det + prior.dim * _LOG_2PI)
    grad = -cho_solve((prior.chol, True), theta)
    return logdens, grad


def _exp_logpdf(x, rate, floor=None):
    if floor is None:
        return math.log(rate) - rate * x if x >= 0 else -math.inf
    if x < floor:
        return -math.inf
    return math.log(rate) - rate * x + rate * floor


def hyper_logprior(hypers, priors):
    """Sum of exponential log-densities; ``-inf`` when a floored ``ell`` is below its floor."""
    total = 0.0
    for h, pr in zip(hypers, priors, strict=True):
        if not isinstance(h, KernelHyper):
            h = KernelHyper(*h)
        total += _exp_logpdf(h.marginal_scale, pr.rate_scale)
        total += _exp_logpdf(h.length_scale, pr.rate_length, pr.ell_floor)
    return total


def prior_medians(priors):
    """Median kernel hyperparameters under each (possibly floored) exponential prior."""
    out = []
    for pr in priors:
        ell = math.log(2) / pr.rate_length + (pr.ell_floor or 0.0)
        out.append(KernelHyper(math.log(2) / pr.rate_scale, ell, pr.ell_floor))
    return tuple(out)


def sample_gp_prior(prior, rng, size=None):
    """Draws ``L z`` with ``z`` standard normal; shape ``(size, dim)`` or ``(dim,)``."""
    shape = (prior.dim,) if size is None else (size, prior.dim)
    z = rng.standard_normal(shape)
    return z @ prior.chol.T
