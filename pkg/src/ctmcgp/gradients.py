"""Derivatives of CTMC log-likelihoods with respect to rates.

Three ways to differentiate ``exp(t M)`` in the direction of a unit matrix
``E_ij`` are provided:

``exact``
    Upper-right block of ``exp(t [[M, E], [0, M]])``. One ``2S x 2S``
    exponential per direction, so ``O(S^5)`` for all directions.
``series``
    ``exp(tM) sum_{k<K} t^{k+1}/(k+1)! C_k`` with ``C_0 = E`` and
    ``C_k = C_{k-1} M - M C_{k-1}``.
``approx``
    The first series term, ``t exp(tM) E_ij``: a single nonzero column
    ``j`` equal to ``t`` times column ``i`` of the cached transition matrix.

Likelihood gradients are of the log-likelihood and are returned in the
space of normalized rates ``lambda`` (all ``S*S`` entries, diagonal
included, each treated as a free variable). :func:`chain_rule_to_theta`
maps them to the log-rates ``theta`` that generate the normalized matrix.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .ctmc import PairIndex, build_rate_matrix, normalize
from .errors import InputError, NumericalError, StateError
from .expm import expm
from .likelihood import preorder_partials, sequential_pass, tree_loglik

__all__ = [
    "RateGradient", "SparseColumn", "METHODS",
    "expm_frechet_exact", "expm_frechet_all", "expm_grad_series", "expm_grad_approx",
    "sequential_loglik_grad", "tree_loglik_grad", "differential_delta",
    "chain_rule_to_theta", "central_difference_grad", "lambda_central_difference",
    "theta_loglik_tree", "theta_loglik_sequential",
]

METHODS = ("exact", "series", "approx")

# Element budget for one batch of augmented matrices.
_BATCH_ELEMENTS = 1 << 16



@dataclass(frozen=True)
class RateGradient:
    """A gradient tagged with the space it lives in and how it was computed.

    ``matrix`` is ``S x S``. In ``lambda`` space the diagonal holds the
    derivatives with respect to the diagonal rates; in ``theta`` space the
    diagonal is zero.
    """

    matrix: np.ndarray
    space: str
    method: str

    def __post_init__(self):
        if self.space not in ("lambda", "theta"):
            raise InputError(f"unknown gradient space {self.space!r}")
        m = np.array(self.matrix, dtype=float)
        if not np.all(np.isfinite(m)):
            raise NumericalError(f"non-finite {self.method} gradient in {self.space} space")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def S(self):
        return self.matrix.shape[0]

    @property
    def values(self):
        """Off-diagonal entries in pair order."""
        return PairIndex(self.S).from_matrix(self.matrix)

    @property
    def diagonal(self):
        return np.diag(self.matrix).copy()


@dataclass(frozen=True)
class SparseColumn:
    """An ``S x S`` matrix that is zero outside column ``column``."""

    column: int
    values: np.ndarray
    size: int

    def to_dense(self):
        out = np.zeros((self.size, self.size))
        out[:, self.column] = self.values
        return out


def _direction(S, direction):
    if isinstance(direction, tuple):
        i, j = direction
        E = np.zeros((S, S))
        E[i, j] = 1.0
        return E
    E = np.asarray(direction, dtype=float)
    if E.shape != (S, S):
        raise InputError(f"direction must be a pair or an {S}x{S} matrix")
    return E


def expm_frechet_exact(M, t, direction):
    """Derivative of ``exp(t M)`` in the direction ``E`` by block augmentation.

    ``direction`` is a pair ``(i, j)`` or a dense ``S x S`` matrix; a dense
    direction gives the directional derivative along that matrix.
    """
    M = np.asarray(M, dtype=float)
    S = M.shape[0]
    E = _direction(S, direction)
    B = np.zeros((2 * S, 2 * S))
    B[:S, :S] = M
    B[S:, S:] = M
    B[:S, S:] = E
    return expm(t * B)[:S, S:]


def expm_frechet_all(M, t):
    """Exact derivatives of ``exp(t M)`` along every ``E_ij``, shape ``(S, S, S, S)``.

    ``out[i, j]`` is the derivative with respect to entry ``(i, j)``.
    """
    M = np.asarray(M, dtype=float)
    S = M.shape[0]
    n = S * S
    B = np.zeros((n, 2 * S, 2 * S))
    B[:, :S, :S] = M
    B[:, S:, S:] = M
    ii, jj = np.divmod(np.arange(n), S)
    B[np.arange(n), ii, S + jj] = 1.0
    return expm(t * B)[:, :S, S:].reshape(S, S, S, S)


def expm_grad_series(M, t, direction, K):
    """Commutator-series derivative of ``exp(t M)`` truncated after ``K`` terms."""
    if K < 1:
        raise InputError("series truncation order K must be >= 1")
    M = np.asarray(M, dtype=float)
    S = M.shape[0]
    C = _direction(S, direction)
    total = np.zeros((S, S))
    coef = t
    for k in range(K):
        total += coef * C
        C = C @ M - M @ C
        coef *= t / (k + 2)
    return expm(t * M) @ total


def expm_grad_approx(P, t, direction):
    """First-order derivative ``t P E_ij`` as its single nonzero column.

    ``P`` is the cached ``exp(t M)`` (array or :class:`TransitionMatrix`).
    """
    P = getattr(P, "P", P)
    i, j = direction
    return SparseColumn(column=j, values=t * np.asarray(P)[:, i], size=P.shape[0])


def _check_method(method, K):
    if method not in METHODS:
        raise InputError(f"unknown gradient method {method!r}; expected one of {METHODS}")
    if method == "series" and (K is None or K < 1):
        raise InputError("series method needs K >= 1")


def _method_tag(method, K):
    return f"series({K})" if method == "series" else method


def _derivative_batches(G, times, method, K, P):
    """Yield ``(sel, D)`` with ``D[b, i, j]`` the derivative of ``exp(times[sel[b]] G)`` along ``E_ij``.

    Zero times are skipped. Work is batched over times, capped at
    ``_BATCH_ELEMENTS`` array elements per batch.
    """
    S = G.shape[0]
    n = S * S
    ii, jj = np.divmod(np.arange(n), S)
    idx = np.flatnonzero(np.asarray(times) != 0)
    per = n * 4 * S * S
    chunk = max(1, _BATCH_ELEMENTS // per)
    for start in range(0, idx.size, chunk):
        sel = idx[start:start + chunk]
        t = np.asarray(times, dtype=float)[sel][:, None, None, None]
        if method == "exact":
            B = np.zeros((sel.size, n, 2 * S, 2 * S))
            B[:, :, :S, :S] = G
            B[:, :, S:, S:] = G
            B[:, np.arange(n), ii, S + jj] = 1.0
            D = expm((t * B).reshape(-1, 2 * S, 2 * S))[:, :S, S:]
        else:
            C = np.zeros((sel.size, n, S, S))
            C[:, np.arange(n), ii, jj] = 1.0
            total = np.zeros_like(C)
            coef = t.copy()
            for k in range(K):
                total += coef * C
                C = C @ G - G @ C
                coef *= t / (k + 2)
            D = P[sel][:, None] @ total
        yield sel, D.reshape(sel.size, S, S, S, S)


def sequential_loglik_grad(obs, rates, method="approx", K=30, cache=None):
    """Gradient of the sequential log-likelihood with respect to normalized rates."""
    _check_method(method, K)
    cache = sequential_pass(obs, rates) if cache is None else cache
    if not np.isfinite(cache.loglik):
        raise NumericalError("likelihood is zero; gradient undefined")
    G = cache.generator
    S = G.shape[0]
    out = np.zeros((S, S))
    if cache.intervals.size == 0:
        return RateGradient(out, "lambda", _method_tag(method, K))
    idx = np.arange(cache.intervals.size)
    denom = cache.P[idx, cache.origin, cache.target]
    if method == "approx":
        # d log P_ab / d lambda_ij ~ t P_ai [j == b] / P_ab
        rows = cache.intervals[:, None] * cache.P[idx, cache.origin, :] / denom[:, None]
        np.add.at(out.T, cache.target, rows)
    else:
        for sel, D in _derivative_batches(G, cache.intervals, method, K, cache.P):
            D = D[np.arange(sel.size), :, :, cache.origin[sel], cache.target[sel]]
            out += np.einsum("bij,b->ij", D, 1.0 / denom[sel])
    return RateGradient(out, "lambda", _method_tag(method, K))


def tree_loglik_grad(tree, tips, rates, partials, method="approx", K=30):
    """Gradient of the tree log-likelihood with respect to normalized rates.

    ``partials`` must come from :func:`tree_loglik` on the same inputs; the
    pre-order pass is run here if it has not been already. The root
    distribution is treated as independent of the rates.
    """
    _check_method(method, K)
    if partials is None or partials.post is None:
        raise StateError("tree_loglik_grad needs post-order partials from tree_loglik")
    if not np.isfinite(partials.loglik):
        raise NumericalError("likelihood is zero; gradient undefined")
    if not partials.has_preorder:
        preorder_partials(tree, partials)
    S = partials.post.shape[1]
    n_branches = tree.n_nodes - 1
    out = np.zeros((S, S))
    if n_branches == 0:
        return RateGradient(out, "lambda", _method_tag(method, K))
    lengths = np.ascontiguousarray(tree.branch_length[:n_branches])
    if method == "approx":
        _kernels.approx_pair_accumulate(lengths, partials.post, partials.pre, n_branches, out)
        return RateGradient(out, "lambda", "approx")
    post, sib, P = partials.post, partials.sib, partials.P
    for sel, D in _derivative_batches(partials.generator, lengths, method, K, P):
        local = np.einsum("bk,bkl,bl->b", sib[sel], P[sel], post[sel])
        out += np.einsum("bk,bijkl,bl->ij", sib[sel] / local[:, None], D, post[sel], optimize=True)
    return RateGradient(out, "lambda", _method_tag(method, K))


def differential_delta(grad):
    """``delta_ij = dL/dlambda_ij - dL/dlambda_ii`` in pair order."""
    if grad.space != "lambda":
        raise InputError("differential_delta needs a lambda-space gradient")
    m = grad.matrix
    return PairIndex(grad.S).from_matrix(m - np.diag(m)[:, None])


def chain_rule_to_theta(grad, rates):
    """Map a lambda-space gradient to the log-rates ``theta`` (exp link).

    ``dL/dtheta_ij = [delta_ij - (sum_uv dL/dlambda_uv lambda_uv) pi_i] lambda_ij``
    where ``pi`` is the distribution used for normalization.
    """
    if grad.space != "lambda":
        raise InputError(f"chain_rule_to_theta expects a lambda-space gradient, got {grad.space!r}")
    if not rates.is_normalized:
        raise InputError("chain_rule_to_theta needs a normalized rate matrix")
    m = grad.matrix
    L = rates.normalized
    delta = m - np.diag(m)[:, None]
    total = float(np.sum(m * L))
    out = (delta - total * np.asarray(rates.pi)[:, None]) * L
    np.fill_diagonal(out, 0.0)
    return RateGradient(out, "theta", grad.method)


def central_difference_grad(f, theta, h=None, space="theta"):
    """Central differences ``(f(x + h e_k) - f(x - h e_k)) / 2h`` per coordinate.

    By default ``h_k = 1e-5 max(1, |x_k|)``. Returns a :class:`RateGradient`
    when ``theta`` has length ``S^2 - S`` for some ``S``; otherwise a plain
    array.
    """
    x = np.asarray(theta, dtype=float)
    steps = (1e-5 * np.maximum(1.0, np.abs(x))) if h is None else np.broadcast_to(float(h), x.shape)
    if np.any(steps <= 0):
        raise InputError("finite-difference step must be positive")
    grad = np.empty_like(x)
    for k in range(x.size):
        up = x.copy()
        down = x.copy()
        up[k] += steps[k]
        down[k] -= steps[k]
        fu, fd = f(up), f(down)
        if not (np.isfinite(fu) and np.isfinite(fd)):
            raise NumericalError(f"non-finite function value at coordinate {k}")
        grad[k] = (fu - fd) / (2 * steps[k])
    S = (1 + math.isqrt(1 + 4 * x.size)) // 2
    if x.size and S * S - S == x.size:
        return RateGradient(PairIndex(S).to_matrix(grad), space, "central-diff")
    return grad


def lambda_central_difference(loglik_of_generator, G, h=None):
    """Central differences of a likelihood over every entry of a generator.

    Entries are perturbed one at a time with all others (diagonal included)
    held fixed, matching the lambda-space convention of the analytic
    gradients.
    """
    G = np.asarray(G, dtype=float)
    S = G.shape[0]
    flat = central_difference_grad(lambda v: loglik_of_generator(v.reshape(S, S)), G.ravel(), h=h)
    flat = flat if isinstance(flat, np.ndarray) else flat.values
    return RateGradient(flat.reshape(S, S), "lambda", "central-diff")


def theta_loglik_tree(tree, tips, pi=None, pi_init=None, root_dist=None):
    """``theta -> tree log-likelihood`` through build, normalize and prune."""
    def f(theta):
        rates = normalize(build_rate_matrix(theta, pi=pi, pi_init=pi_init))
        return tree_loglik(tree, tips, rates, root_dist)[0]
    return f


def theta_loglik_sequential(obs, pi=None, pi_init=None):
    """``theta -> sequential log-likelihood`` through build and normalize."""
    def f(theta):
        rates = normalize(build_rate_matrix(theta, pi=pi, pi_init=pi_init))
        return sequential_pass(obs, rates).loglik
    return f
