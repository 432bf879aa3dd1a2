"""Log-likelihoods for fully observed paths, sequential observations and tip data on a tree.

Impossible data give ``-inf`` rather than an exception so that samplers
can reject such proposals without special casing.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .ctmc import (
    _check_probability, transition_matrices, ObservationSequence, RateMatrix,
)
from .errors import GuardError, InputError, StateError

__all__ = [
    "TipData", "PartialLikelihoods", "SequentialCache",
    "loglik_fully_observed", "loglik_sequential", "sequential_pass",
    "tree_loglik", "preorder_partials", "brute_force_tree_loglik",
    "tree_loglik_sites",
]

BRUTE_FORCE_LIMIT = 10 ** 6


@dataclass(frozen=True)
class TipData:
    """One observed state per tip, as an int array indexed by tip."""

    states: np.ndarray

    @classmethod
    def from_mapping(cls, mapping, tree, S):
        states = np.full(tree.n_tips, -1, dtype=np.int64)
        for tip, state in mapping.items():
            states[int(tip)] = int(state)
        missing = np.flatnonzero(states < 0)
        if missing.size:
            raise InputError(f"no observation for tip {tree.tip_labels[missing[0]]!r}")
        return cls._checked(states, S)

    @classmethod
    def _checked(cls, states, S):
        states = np.asarray(states, dtype=np.int64)
        if np.any(states < 0) or np.any(states >= S):
            raise InputError(f"tip states must lie in 0..{S - 1}")
        states = states.copy()
        states.flags.writeable = False
        return cls(states)

    def as_dict(self):
        return {k: int(s) for k, s in enumerate(self.states)}


def _tip_states(tips, tree, S):
    if isinstance(tips, TipData):
        states = tips.states
    elif isinstance(tips, dict):
        return TipData.from_mapping(tips, tree, S).states
    else:
        states = np.asarray(tips, dtype=np.int64)
    if states.shape != (tree.n_tips,):
        raise InputError(f"expected {tree.n_tips} tip states, got {states.shape}")
    if np.any(states < 0) or np.any(states >= S):
        raise InputError(f"tip states must lie in 0..{S - 1}")
    return np.ascontiguousarray(states)


@dataclass
class PartialLikelihoods:
    """Rescaled post- and pre-order partials for one site on one tree.

    For every node ``v`` the true vectors are ``post[v] * exp(post_scale[v])``
    and ``pre[v] * exp(pre_scale[v])``. ``sib[c]`` is the parent's pre-order
    vector times the sibling's propagated post-order vector, the quantity
    branch ``c`` is differentiated against.
    """

    loglik: float
    P: np.ndarray
    post: np.ndarray
    post_scale: np.ndarray
    pre: np.ndarray = None
    pre_scale: np.ndarray = None
    sib: np.ndarray = None
    sib_scale: np.ndarray = None
    generator: np.ndarray = None
    root_dist: np.ndarray = None

    @property
    def has_preorder(self):
        return self.pre is not None

    def node_loglik(self):
        """``log(post[v] . pre[v])`` per node, unscaled; constant across nodes."""
        if not self.has_preorder:
            raise StateError("pre-order partials have not been computed")
        with np.errstate(divide="ignore"):
            return np.log(np.einsum("vs,vs->v", self.post, self.pre)) + self.post_scale + self.pre_scale


def _root_dist(rates, root_dist):
    if root_dist is None:
        return np.asarray(rates.pi_init)
    return _check_probability(root_dist, rates.S, "root_dist")


def _generator_for_tree(rates):
    if isinstance(rates, RateMatrix):
        if not rates.is_normalized:
            raise InputError("tree likelihoods require a normalized rate matrix")
        return rates.normalized
    return np.asarray(rates, dtype=float)


def tree_loglik(tree, tips, rates, root_dist=None, *, clamp=True):
    """Tree data log-likelihood by post-order pruning.

    ``rates`` is a normalized :class:`RateMatrix`, or a raw ``S x S`` array
    (used by finite-difference checks on perturbed generators, in which case
    ``root_dist`` is required and ``clamp`` should be False).

    Returns
    -------
    loglik : float
    partials : PartialLikelihoods
        With the post-order pass filled and branch transition matrices cached.
    """
    G = _generator_for_tree(rates)
    S = G.shape[0]
    if S < 2:
        raise InputError("tree likelihoods need at least 2 states")
    if root_dist is None:
        if not isinstance(rates, RateMatrix):
            raise InputError("root_dist is required with a raw generator")
        root_dist = rates.pi_init
    root_dist = np.ascontiguousarray(_check_probability(root_dist, S, "root_dist"))
    states = _tip_states(tips, tree, S)
    P = np.ascontiguousarray(transition_matrices(G, tree.branch_length, clamp=clamp))
    n = tree.n_nodes
    post = np.empty((n, S))
    post_scale = np.empty(n)
    ok = _kernels.postorder_pass(
        np.ascontiguousarray(tree.children), P, states, tree.n_tips, post, post_scale)
    if ok:
        with np.errstate(divide="ignore"):
            loglik = float(np.log(post[tree.root] @ root_dist) + post_scale[tree.root])
    else:
        loglik = -math.inf
    if not np.isfinite(loglik) and not loglik == -math.inf:
        loglik = -math.inf
    partials = PartialLikelihoods(
        loglik=loglik, P=P, post=post, post_scale=post_scale,
        generator=G, root_dist=root_dist)
    return loglik, partials


def preorder_partials(tree, partials):
    """Fill the pre-order partials of ``partials`` in place and return it."""
    if partials.post is None:
        raise StateError("post-order pass missing")
    n, S = partials.post.shape
    pre = np.empty((n, S))
    pre_scale = np.empty(n)
    sib = np.empty((n, S))
    sib_scale = np.empty(n)
    _kernels.preorder_pass(
        np.ascontiguousarray(tree.children), partials.P, partials.post, partials.post_scale,
        partials.root_dist, pre, pre_scale, sib, sib_scale)
    partials.pre, partials.pre_scale = pre, pre_scale
    partials.sib, partials.sib_scale = sib, sib_scale
    return partials


def tree_loglik_sites(tree, sites, rates, root_dist=None):
    """Sum of per-site tree log-likelihoods sharing one set of branch matrices."""
    total = 0.0
    parts = []
    first = None
    for tips in sites:
        if first is None:
            ll, part = tree_loglik(tree, tips, rates, root_dist)
            first = part
        else:
            part = _reuse_branches(tree, tips, first)
            ll = part.loglik
        total += ll
        parts.append(part)
    return total, parts


def _reuse_branches(tree, tips, template):
    S = template.P.shape[1]
    states = _tip_states(tips, tree, S)
    n = tree.n_nodes
    post = np.empty((n, S))
    post_scale = np.empty(n)
    ok = _kernels.postorder_pass(
        np.ascontiguousarray(tree.children), template.P, states, tree.n_tips, post, post_scale)
    with np.errstate(divide="ignore"):
        ll = float(np.log(post[tree.root] @ template.root_dist) + post_scale[tree.root]) if ok else -math.inf
    return PartialLikelihoods(ll, template.P, post, post_scale,
                              generator=template.generator, root_dist=template.root_dist)


def brute_force_tree_loglik(tree, tips, rates, root_dist=None):
    """Tree log-likelihood by summing over every internal-node state assignment."""
    G = _generator_for_tree(rates)
    S = G.shape[0]
    if root_dist is None:
        root_dist = rates.pi_init
    root_dist = _check_probability(root_dist, S, "root_dist")
    states = _tip_states(tips, tree, S)
    N = tree.n_tips
    if N == 1:
        with np.errstate(divide="ignore"):
            return float(np.log(root_dist[states[0]]))
    n_internal = N - 1
    if S ** n_internal > BRUTE_FORCE_LIMIT:
        raise GuardError(
            f"brute-force enumeration needs {S}^{n_internal} assignments (limit {BRUTE_FORCE_LIMIT})")
    P = transition_matrices(G, tree.branch_length)
    assignment = np.empty(tree.n_nodes, dtype=np.int64)
    assignment[:N] = states
    branches = range(tree.n_nodes - 1)
    total = 0.0
    for internal in itertools.product(range(S), repeat=n_internal):
        assignment[N:] = internal
        prob = root_dist[assignment[tree.root]]
        for c in branches:
            prob *= P[c, assignment[tree.parent[c]], assignment[c]]
        total += prob
    return math.log(total) if total > 0 else -math.inf


@dataclass(frozen=True)
class SequentialCache:
    """Per-interval transition matrices from a sequential likelihood pass."""

    loglik: float
    intervals: np.ndarray
    P: np.ndarray
    origin: np.ndarray
    target: np.ndarray
    generator: np.ndarray


def _as_sequence(obs):
    if isinstance(obs, ObservationSequence):
        return obs
    states, times = obs
    return ObservationSequence(states, times)


def sequential_pass(obs, rates, *, clamp=True, pi_init=None):
    obs = _as_sequence(obs)
    if isinstance(rates, RateMatrix):
        G = rates.generator
        pi_init = rates.pi_init
    else:
        G = np.asarray(rates, dtype=float)
        if pi_init is None:
            raise InputError("pi_init is required with a raw generator")
    S = G.shape[0]
    x = np.asarray(obs.states, dtype=np.int64)
    if np.any(x < 0) or np.any(x >= S):
        raise InputError(f"observed states must lie in 0..{S - 1}")
    dt = obs.intervals
    P = transition_matrices(G, dt, clamp=clamp) if dt.size else np.empty((0, S, S))
    origin, target = x[:-1], x[1:]
    probs = P[np.arange(dt.size), origin, target]
    with np.errstate(divide="ignore"):
        loglik = float(np.log(pi_init[x[0]]) + np.log(probs).sum())
    if np.isnan(loglik):
        loglik = -math.inf
    return SequentialCache(loglik, dt, P, origin, target, G)


def loglik_sequential(obs, rates):
    """``log pi_init(x_1) + sum_k log P_{x_{k-1} x_k}(t_k - t_{k-1})``."""
    return sequential_pass(obs, rates).loglik


def loglik_fully_observed(path, rates):
    """Log-density of a fully observed path under ``rates.generator``.

    Each sojourn in state ``x_{k-1}`` contributes ``log q_{x_{k-1}} - q_{x_{k-1}} tau``
    and each jump ``log(q_{x_{k-1} x_k} / q_{x_{k-1}})``. When the path has a
    horizon past its last jump, the survival term ``-q_{x_n} (T - t_n)`` is
    included.
    """
    if not path.fully_observed:
        raise InputError("loglik_fully_observed requires a fully observed path")
    G = rates.generator
    x = np.asarray(path.states, dtype=np.int64)
    t = np.asarray(path.times)
    if np.any(x < 0) or np.any(x >= G.shape[0]):
        raise InputError("path visits states outside the state space")
    with np.errstate(divide="ignore"):
        ll = float(np.log(rates.pi_init[x[0]]))
        exit_rates = -np.diag(G)
        origin, target = x[:-1], x[1:]
        tau = np.diff(t)
        jump = G[origin, target]
        # sojourn density q e^{-q tau} times jump probability q_ab / q = q_ab e^{-q tau}
        ll += float(np.sum(np.log(jump) - exit_rates[origin] * tau))
        if path.horizon is not None:
            ll -= float(exit_rates[x[-1]] * (path.horizon - t[-1]))
    return ll if not np.isnan(ll) else -math.inf
