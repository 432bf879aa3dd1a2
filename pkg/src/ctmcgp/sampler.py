"""HMC with surrogate trajectories inside a Metropolis-within-Gibbs loop.

Trajectories are integrated with a cheap surrogate gradient; the proposal
is accepted or rejected with the exact log-posterior, so the chain targets
the exact posterior whatever the quality of the surrogate. Kernel
hyperparameters are updated by Gaussian random-walk Metropolis on the log
scale with the log-rates held fixed.
"""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, StateError

__all__ = [
    "HMCConfig", "ChainState", "SampleRecord", "ChainResult",
    "leapfrog", "hmc_step", "rw_mh_hyper_step", "rw_mh_hyper_step_whitened", "run_chain", "initial_state",
    "rw_metropolis",
]


@dataclass(frozen=True)
class HMCConfig:
    """Sampler settings.

    ``mass`` is the diagonal of the mass matrix (all ones by default).
    ``step_jitter`` draws each trajectory's step size uniformly within
    ``+-step_jitter`` relative of the current value. ``hyper_every`` is the
    number of HMC sweeps between hyperparameter updates. ``hyper_move``
    picks the hyperparameter update: ``centered`` holds ``theta`` fixed,
    ``whitened`` holds the position fixed and lets ``theta`` follow, and
    ``both`` runs the two in turn. Targets without a whitened position
    always use the centered move.
    """

    step_size: float = 0.1
    leapfrog_steps: int = 50
    mass: tuple = None
    target_accept: float = 0.65
    warmup_iterations: int = 500
    iterations: int = 1000
    thin: int = 1
    seed: int = 0
    hyper_every: int = 10
    hyper_scale: float = 0.5
    hyper_move: str = "both"
    adapt_step: bool = True
    adapt_mass: bool = False
    step_jitter: float = 0.1
    divergence_threshold: float = 1000.0

    def __post_init__(self):
        if not self.step_size > 0:
            raise InputError("step_size must be positive")
        if self.leapfrog_steps < 1:
            raise InputError("leapfrog_steps must be >= 1")
        if not 0 < self.target_accept < 1:
            raise InputError("target_accept must lie in (0, 1)")
        if self.warmup_iterations < 0 or self.iterations < 0:
            raise InputError("iteration counts must be nonnegative")
        if self.thin < 1 or self.hyper_every < 1:
            raise InputError("thin and hyper_every must be >= 1")
        if self.hyper_scale < 0 or not 0 <= self.step_jitter < 1:
            raise InputError("hyper_scale must be >= 0 and step_jitter in [0, 1)")
        if self.hyper_move not in ("centered", "whitened", "both"):
            raise InputError(f"unknown hyper_move {self.hyper_move!r}")
        if self.mass is not None and any(m <= 0 for m in self.mass):
            raise InputError("mass entries must be positive")


@dataclass(frozen=True)
class ChainState:
    """Current position and hyperparameters with caches that always match them."""

    position: np.ndarray
    log_hypers: np.ndarray
    log_posterior: float
    grad: np.ndarray
    iteration: int = 0


@dataclass(frozen=True)
class SampleRecord:
    iteration: int
    theta: np.ndarray
    hypers: np.ndarray
    log_posterior: float
    accepted: bool
    hyper_accepted: bool = None
    timings: dict = field(default_factory=dict)


@dataclass
class ChainResult:
    records: list
    step_size: float
    inv_mass: np.ndarray
    accept_rate: float
    hyper_accept_rate: float
    divergences: int
    warmup_accept_rate: float

    def thetas(self):
        return np.array([r.theta for r in self.records]).reshape(len(self.records), -1)

    def hypers(self):
        return np.array([r.hypers for r in self.records]).reshape(len(self.records), -1)


def initial_state(model, rng, position=None, log_hypers=None):
    p0, h0 = model.initial(rng)
    position = p0 if position is None else np.asarray(position, dtype=float)
    log_hypers = h0 if log_hypers is None else np.asarray(log_hypers, dtype=float)
    lp = model.log_posterior(position, log_hypers)
    if not np.isfinite(lp):
        raise StateError("initial log-posterior is -inf; the data are impossible under the starting rates")
    return ChainState(position, log_hypers, lp, model.surrogate_grad(position, log_hypers))


def leapfrog(theta, momentum, grad_fn, step_size, n_steps, inv_mass=None, grad0=None):
    """Half-kick, drift, half-kick, repeated ``n_steps`` times.

    ``grad_fn`` returns the gradient of the log-density. Returns the final
    position, momentum and gradient; a non-finite gradient stops the
    trajectory and is returned as NaN arrays.
    """
    x = np.array(theta, dtype=float)
    p = np.array(momentum, dtype=float)
    inv_mass = np.ones_like(x) if inv_mass is None else inv_mass
    g = grad_fn(x) if grad0 is None else grad0
    for _ in range(n_steps):
        p = p + 0.5 * step_size * g
        x = x + step_size * inv_mass * p
        g = grad_fn(x)
        if not np.all(np.isfinite(g)):
            nan = np.full_like(x, np.nan)
            return nan, nan, nan
        p = p + 0.5 * step_size * g
    return x, p, g


def hmc_step(state, config, model, rng, step_size=None, inv_mass=None):
    """One surrogate-trajectory HMC transition on the position.

    Returns ``(state, info)`` where ``info`` holds ``accepted``,
    ``accept_prob`` and ``divergent``.
    """
    eps = config.step_size if step_size is None else step_size
    if config.step_jitter:
        eps *= 1.0 + config.step_jitter * (2.0 * rng.random() - 1.0)
    dim = state.position.size
    inv_mass = np.ones(dim) if inv_mass is None else inv_mass
    p0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
    h0 = -state.log_posterior + 0.5 * float(np.sum(inv_mass * p0 ** 2))
    grad_fn = lambda x: model.surrogate_grad(x, state.log_hypers)
    x1, p1, g1 = leapfrog(state.position, p0, grad_fn, eps, config.leapfrog_steps, inv_mass, state.grad)
    u = rng.random()
    info = {"accepted": False, "accept_prob": 0.0, "divergent": False}
    if not np.all(np.isfinite(x1)):
        info["divergent"] = True
        return replace(state, iteration=state.iteration + 1), info
    lp1 = model.log_posterior(x1, state.log_hypers)
    h1 = -lp1 + 0.5 * float(np.sum(inv_mass * p1 ** 2))
    dh = h1 - h0
    if not np.isfinite(lp1):
        return replace(state, iteration=state.iteration + 1), info
    if not np.isfinite(dh) or abs(dh) > config.divergence_threshold:
        info["divergent"] = True
        return replace(state, iteration=state.iteration + 1), info
    prob = min(1.0, math.exp(-dh))
    info["accept_prob"] = prob
    if u < prob:
        info["accepted"] = True
        return ChainState(x1, state.log_hypers, lp1, g1, state.iteration + 1), info
    return replace(state, iteration=state.iteration + 1), info


def rw_mh_hyper_step(state, scale, model, rng):
    """Gaussian random walk on the log-hyperparameters with the log-rates fixed."""
    if model.n_hypers == 0:
        return state, None
    if scale == 0:
        return state, True
    theta = model.theta(state.position, state.log_hypers)
    proposal = state.log_hypers + scale * rng.standard_normal(state.log_hypers.size)
    current = model.hyper_log_target(theta, state.log_hypers)
    proposed = model.hyper_log_target(theta, proposal)
    if not (np.isfinite(proposed) and math.log(rng.random()) < proposed - current):
        return state, False
    position = model.reposition(theta, proposal)
    lp = model.log_posterior(position, proposal)
    return ChainState(position, proposal, lp, model.surrogate_grad(position, proposal), state.iteration), True


def rw_mh_hyper_step_whitened(state, scale, model, rng):
    """Gaussian random walk on the log-hyperparameters with the position fixed.

    Only the likelihood, the hyperprior and the log-scale Jacobian change;
    the standard-normal density of the whitened position cancels.
    """
    if model.n_hypers == 0:
        return state, None
    if scale == 0:
        return state, True
    proposal = state.log_hypers + scale * rng.standard_normal(state.log_hypers.size)
    current = model.whitened_hyper_log_target(state.position, state.log_hypers)
    proposed = model.whitened_hyper_log_target(state.position, proposal)
    if not (np.isfinite(proposed) and math.log(rng.random()) < proposed - current):
        return state, False
    lp = model.log_posterior(state.position, proposal)
    return ChainState(state.position, proposal, lp, model.surrogate_grad(state.position, proposal),
                      state.iteration), True


def _hyper_moves(config, model):
    if not getattr(model, "supports_whitened_hyper", False):
        return (rw_mh_hyper_step,)
    return {"centered": (rw_mh_hyper_step,), "whitened": (rw_mh_hyper_step_whitened,),
            "both": (rw_mh_hyper_step, rw_mh_hyper_step_whitened)}[config.hyper_move]


def _record(model, state, accepted, hyper_accepted, timings):
    return SampleRecord(
        iteration=state.iteration,
        theta=model.theta(state.position, state.log_hypers),
        hypers=model.hypers(state.log_hypers),
        log_posterior=state.log_posterior,
        accepted=accepted,
        hyper_accepted=hyper_accepted,
        timings=timings,
    )


def run_chain(config, model, state=None, on_record=None):
    """Warmup then sampling; returns a :class:`ChainResult`.

    During warmup ``log(step_size)`` follows a Robbins-Monro recursion
    toward ``target_accept``; the final step size is the average over the
    second half of warmup and is frozen afterwards. With ``adapt_mass`` the
    inverse mass is set to the position variances observed over the middle
    of warmup. Records after warmup are kept every ``thin`` iterations and
    passed to ``on_record`` if given.
    """
    rng = np.random.default_rng(config.seed)
    state = initial_state(model, rng) if state is None else state
    dim = state.position.size
    inv_mass = np.ones(dim) if config.mass is None else 1.0 / np.asarray(config.mass, dtype=float)
    log_eps = math.log(config.step_size)
    late_log_eps = []
    window = []
    W = config.warmup_iterations
    do_hmc = dim > 0
    n_acc = n_hyper = n_hyper_acc = n_div = n_warm_acc = 0
    records = []
    hyper_moves = _hyper_moves(config, model)
    total = W + config.iterations
    for it in range(total):
        warm = it < W
        t0 = time.perf_counter()
        accepted = False
        if do_hmc:
            state, info = hmc_step(state, config, model, rng, math.exp(log_eps), inv_mass)
            accepted = info["accepted"]
            n_div += info["divergent"]
            if warm:
                n_warm_acc += accepted
                if config.adapt_step:
                    gain = 1.0 / (it + 10) ** 0.6
                    log_eps += 2.0 * gain * (info["accept_prob"] - config.target_accept)
                    if it >= W // 2:
                        late_log_eps.append(log_eps)
                if config.adapt_mass and W // 4 <= it < W // 2:
                    window.append(state.position.copy())
                if config.adapt_mass and it == W // 2 - 1 and len(window) > 10:
                    var = np.var(np.array(window), axis=0)
                    inv_mass = np.clip(var, 1e-6, None) / np.mean(np.clip(var, 1e-6, None))
            else:
                n_acc += accepted
        else:
            state = replace(state, iteration=state.iteration + 1)
        t1 = time.perf_counter()
        hyper_accepted = None
        if model.n_hypers and (it + 1) % config.hyper_every == 0:
            for move in hyper_moves:
                state, moved = move(state, config.hyper_scale, model, rng)
                hyper_accepted = bool(hyper_accepted) or moved
                if not warm:
                    n_hyper += 1
                    n_hyper_acc += moved
        if warm and it == W - 1 and late_log_eps:
            log_eps = float(np.mean(late_log_eps))
        if not warm and (it - W) % config.thin == config.thin - 1:
            rec = _record(model, state, accepted, hyper_accepted,
                          {"hmc": t1 - t0, "hyper": time.perf_counter() - t1})
            records.append(rec)
            if on_record is not None:
                on_record(rec)
    n_samp = config.iterations
    return ChainResult(
        records=records,
        step_size=math.exp(log_eps),
        inv_mass=inv_mass,
        accept_rate=n_acc / n_samp if n_samp and do_hmc else float("nan"),
        hyper_accept_rate=n_hyper_acc / n_hyper if n_hyper else float("nan"),
        divergences=n_div,
        warmup_accept_rate=n_warm_acc / W if W and do_hmc else float("nan"),
    )


def rw_metropolis(log_target, x0, scale, n, rng, thin=1):
    """Plain Gaussian random-walk Metropolis; returns ``(draws, accept_rate)``."""
    x = np.array(x0, dtype=float)
    lp = log_target(x)
    if not np.isfinite(lp):
        raise StateError("random-walk start has zero density")
    scale = np.broadcast_to(np.asarray(scale, dtype=float), x.shape)
    out = np.empty((n // thin, x.size))
    acc = 0
    for k in range(n):
        y = x + scale * rng.standard_normal(x.size)
        ly = log_target(y)
        if np.isfinite(ly) and math.log(rng.random()) < ly - lp:
            x, lp = y, ly
            acc += 1
        if (k + 1) % thin == 0:
            out[(k + 1) // thin - 1] = x
    return out, acc / n if n else float("nan")
