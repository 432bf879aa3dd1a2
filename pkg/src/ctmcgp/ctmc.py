"""State spaces, rate matrices, transition probabilities and forward simulation.

Conventions
-----------
States are integers ``0..S-1`` internally; labels are only used at the I/O
boundary. Off-diagonal pairs ``(i, j)`` are enumerated row-major with the
diagonal skipped, giving a linear index in ``0..S*S-S-1``. Every
parameter vector, covariate vector and gradient in the package uses this
order.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError
from .expm import expm

__all__ = [
    "StateSpace", "PairIndex", "RateMatrix", "TransitionMatrix",
    "ObservationSequence", "JumpCount",
    "build_rate_matrix", "normalize", "matrix_exponential",
    "transition_matrices", "simulate_path", "simulate_tip_data",
    "uniform", "LINKS",
]

ROW_SUM_TOL = 1e-12
PROB_TOL = 1e-12
STOCHASTIC_TOL = 1e-10
CLAMP_TOL = 1e-12

LINKS = {"exp": np.exp}


def _readonly(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def uniform(S):
    return np.full(S, 1.0 / S)


def _check_probability(p, S, name):
    p = np.asarray(p, dtype=float)
    if p.shape != (S,):
        raise InputError(f"{name} must have length {S}, got shape {p.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InputError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > PROB_TOL:
        raise InputError(f"{name} sums to {p.sum()!r}, not 1")
    return p


@dataclass(frozen=True)
class StateSpace:
    """A finite set of ``S >= 2`` labelled states."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if len(labels) < 2:
            raise InputError("a state space needs at least 2 states")
        if len(set(labels)) != len(labels):
            raise InputError(f"state labels are not unique: {labels}")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def of_size(cls, S):
        return cls(tuple(str(k + 1) for k in range(S)))

    @property
    def size(self):
        return len(self.labels)

    def __len__(self):
        return len(self.labels)

    def index(self, label):
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise InputError(f"unknown state label {label!r}") from None


@dataclass(frozen=True)
class PairIndex:
    """Row-major enumeration of the ordered off-diagonal pairs of ``S`` states."""

    S: int
    rows: np.ndarray = field(init=False, repr=False)
    cols: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.S < 1:
            raise InputError("PairIndex needs S >= 1")
        r, c = np.nonzero(~np.eye(self.S, dtype=bool))
        r.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "rows", r)
        object.__setattr__(self, "cols", c)

    def __len__(self):
        return self.S * self.S - self.S

    def index(self, i, j):
        if i == j or not (0 <= i < self.S and 0 <= j < self.S):
            raise InputError(f"({i}, {j}) is not an off-diagonal pair of {self.S} states")
        return i * (self.S - 1) + (j if j < i else j - 1)

    def pair(self, k):
        if not 0 <= k < len(self):
            raise InputError(f"pair index {k} out of range for {self.S} states")
        return int(self.rows[k]), int(self.cols[k])

    def pairs(self):
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def to_matrix(self, values, diagonal=None):
        """Scatter a pair-ordered vector into an ``S x S`` matrix."""
        out = np.zeros((self.S, self.S))
        out[self.rows, self.cols] = values
        if diagonal is not None:
            out[np.diag_indices(self.S)] = diagonal
        return out

    def from_matrix(self, M):
        """Gather the off-diagonal entries of ``M`` in pair order."""
        return np.asarray(M)[self.rows, self.cols]


@dataclass(frozen=True)
class RateMatrix:
    """An infinitesimal generator with its normalization data.

    ``Q`` is in natural time. When ``normalized`` is set, it holds
    ``Q / beta`` with ``beta = sum_i pi_i q_i``, the generator on the
    evolutionary time scale (one expected jump per unit time when the
    initial state is drawn from ``pi``).
    """

    Q: np.ndarray
    pi: np.ndarray
    pi_init: np.ndarray
    normalized: np.ndarray = None
    beta: float = None

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise InputError(f"rate matrix must be square, got shape {Q.shape}")
        S = Q.shape[0]
        _check_generator(Q, "Q")
        object.__setattr__(self, "Q", _readonly(Q))
        object.__setattr__(self, "pi", _readonly(_check_probability(self.pi, S, "pi")))
        object.__setattr__(self, "pi_init",
                           _readonly(_check_probability(self.pi_init, S, "pi_init")))
        if self.normalized is not None:
            L = np.asarray(self.normalized, dtype=float)
            _check_generator(L, "normalized generator")
            if self.beta is None or not self.beta > 0:
                raise InputError("normalized rate matrix requires beta > 0")
            object.__setattr__(self, "normalized", _readonly(L))
            object.__setattr__(self, "beta", float(self.beta))

    @property
    def S(self):
        return self.Q.shape[0]

    @property
    def generator(self):
        """The normalized generator when available, otherwise ``Q``."""
        return self.normalized if self.normalized is not None else self.Q

    @property
    def is_normalized(self):
        return self.normalized is not None


def _check_generator(M, name):
    if not np.all(np.isfinite(M)):
        raise InputError(f"{name} has non-finite entries")
    off = M[~np.eye(M.shape[0], dtype=bool)]
    if np.any(off < 0):
        raise InputError(f"{name} has negative off-diagonal entries")
    scale = max(1.0, float(np.abs(M).max()))
    worst = float(np.abs(M.sum(axis=1)).max())
    if worst > ROW_SUM_TOL * scale:
        raise InputError(f"{name} rows do not sum to zero (max |row sum| = {worst:.3g})")


@dataclass(frozen=True)
class TransitionMatrix:
    """``P = exp(t M)``; rows are probability vectors."""

    P: np.ndarray
    t: float


@dataclass(frozen=True)
class ObservationSequence:
    """A sequence of observed states with absolute observation times.

    For a fully observed path ``times`` are the jump times (``times[0]`` is
    the start) and ``horizon``, when given, is the end of the observation
    window; the process is known to stay in ``states[-1]`` until then.
    """

    states: tuple
    times: tuple
    fully_observed: bool = False
    horizon: float = None

    def __post_init__(self):
        states = tuple(int(x) for x in self.states)
        times = tuple(float(t) for t in self.times)
        if len(states) != len(times):
            raise InputError("states and times have different lengths")
        if not states:
            raise InputError("an observation sequence needs at least one observation")
        if any(t < 0 or not np.isfinite(t) for t in times):
            raise InputError("observation times must be finite and nonnegative")
        diffs = np.diff(times)
        if np.any(diffs < 0):
            raise InputError("observation times must be nondecreasing")
        if self.fully_observed:
            if np.any(diffs <= 0):
                raise InputError("jump times of a fully observed path must be strictly increasing")
            for k in range(1, len(states)):
                if states[k] == states[k - 1]:
                    raise InputError(
                        f"fully observed path repeats state {states[k]} at positions {k - 1},{k}")
        if self.horizon is not None and self.horizon < times[-1]:
            raise InputError("horizon precedes the last observation")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "times", times)

    def __len__(self):
        return len(self.states)

    @property
    def intervals(self):
        """Elapsed time between consecutive observations."""
        return np.diff(np.asarray(self.times))


@dataclass(frozen=True)
class JumpCount:
    count: int
    horizon: float

    @classmethod
    def of(cls, path):
        if not path.fully_observed:
            raise InputError("jump counts are defined for fully observed paths only")
        horizon = path.horizon if path.horizon is not None else path.times[-1]
        return cls(len(path) - 1, horizon)


def build_rate_matrix(theta, S=None, link="exp", pi=None, pi_init=None):
    """Generator with off-diagonal rates ``link(theta)`` in pair order."""
    theta = np.asarray(theta, dtype=float)
    if S is None:
        S = int(round((1 + np.sqrt(1 + 4 * theta.size)) / 2))
    index = PairIndex(S)
    if theta.shape != (len(index),):
        raise InputError(f"theta must have length {len(index)} for {S} states, got {theta.shape}")
    if link not in LINKS:
        raise InputError(f"unsupported link function {link!r}")
    bad = np.flatnonzero(~np.isfinite(theta))
    if bad.size:
        i, j = index.pair(int(bad[0]))
        raise InputError(f"theta for pair ({i}, {j}) is not finite: {theta[bad[0]]!r}")
    Q = index.to_matrix(LINKS[link](theta))
    Q[np.diag_indices(S)] = -Q.sum(axis=1)
    return RateMatrix(
        Q=Q,
        pi=uniform(S) if pi is None else pi,
        pi_init=uniform(S) if pi_init is None else pi_init,
    )


def normalize(rates, pi=None):
    """Rescale ``Q`` so the expected jump count under ``pi`` is one per unit time."""
    pi = rates.pi if pi is None else _check_probability(pi, rates.S, "pi")
    Q = rates.Q
    beta = float(pi @ (-np.diag(Q)))
    if not beta > 0:
        raise NumericalError("degenerate generator: normalizing constant is not positive")
    return RateMatrix(Q=Q, pi=pi, pi_init=rates.pi_init, normalized=Q / beta, beta=beta)


def _clamp_stochastic(P):
    """Zero tiny negative entries and renormalize affected rows; reject larger violations."""
    if np.any(P < -CLAMP_TOL):
        raise NumericalError(f"transition matrix has entry {P.min():.3g} below -{CLAMP_TOL}")
    neg = P < 0
    if neg.any():
        P = np.where(neg, 0.0, P)
        rows = neg.any(axis=-1, keepdims=True)
        P = np.where(rows, P / P.sum(axis=-1, keepdims=True), P)
    err = np.abs(P.sum(axis=-1) - 1.0)
    if err.size and err.max() > STOCHASTIC_TOL:
        raise NumericalError(f"transition matrix rows deviate from 1 by {err.max():.3g}")
    return P


def transition_matrices(M, times, clamp=True):
    """Stack of ``exp(t M)`` for every ``t`` in ``times``."""
    times = np.asarray(times, dtype=float)
    P = expm(times[:, None, None] * np.asarray(M, dtype=float))
    return _clamp_stochastic(P) if clamp else P


def matrix_exponential(M, t):
    """Transition matrix ``exp(t M)`` of generator ``M`` over time ``t``."""
    if isinstance(M, RateMatrix):
        M = M.generator
    M = np.asarray(M, dtype=float)
    if not (np.isfinite(t) and t >= 0):
        raise InputError(f"time must be finite and nonnegative, got {t!r}")
    _check_generator(M, "generator")
    if t == 0:
        return TransitionMatrix(np.eye(M.shape[0]), 0.0)
    return TransitionMatrix(_clamp_stochastic(expm(t * M)), float(t))


def simulate_path(rates, t_end, rng_seed):
    """Gillespie simulation of a fully observed path on ``[0, t_end]``.

    Uses ``rates.generator``; the initial state is drawn from ``pi_init``.
    """
    if not t_end > 0:
        raise InputError("t_end must be positive")
    rng = np.random.default_rng(rng_seed)
    G = rates.generator
    exit_rates = -np.diag(G)
    state = int(rng.choice(rates.S, p=rates.pi_init))
    states, times = [state], [0.0]
    t = 0.0
    while exit_rates[state] > 0:
        t += rng.exponential(1.0 / exit_rates[state])
        if t > t_end:
            break
        jump = np.clip(G[state], 0.0, None)
        jump[state] = 0.0
        state = int(rng.choice(rates.S, p=jump / jump.sum()))
        states.append(state)
        times.append(t)
    return ObservationSequence(tuple(states), tuple(times), fully_observed=True, horizon=float(t_end))


def simulate_tip_data(rates, tree, root_dist=None, rng_seed=None):
    """Evolve one character from the root to the tips; returns ``{tip: state}``."""
    rng = np.random.default_rng(rng_seed)
    S = rates.S
    root_dist = rates.pi_init if root_dist is None else _check_probability(root_dist, S, "root_dist")
    P = transition_matrices(rates.generator, tree.branch_length)
    state = np.empty(tree.n_nodes, dtype=np.int64)
    state[tree.root] = rng.choice(S, p=root_dist)
    for v in tree.preorder():
        if v == tree.root:
            continue
        row = P[v, state[tree.parent[v]]]
        state[v] = rng.choice(S, p=row / row.sum())
    return {tip: int(state[tip]) for tip in range(tree.n_tips)}
