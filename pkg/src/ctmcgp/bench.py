"""Wall-time scaling of full tree-gradient evaluations with the number of states.

For each method and state count the likelihood pass (branch transition
matrices and post-order partials) is done once during setup; the timed
function then computes the full ``theta`` gradient from those caches:

``approx``
    pre-order pass, first-order pair accumulation and the chain rule.
``exact``
    pre-order pass, block-augmented derivatives for every direction on
    every branch, and the chain rule.
``central-diff``
    ``2 (S^2 - S)`` full likelihood evaluations.
"""

import math
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .ctmc import build_rate_matrix, normalize, simulate_tip_data
from .errors import GuardError, InputError
from .gradients import central_difference_grad, chain_rule_to_theta, theta_loglik_tree, tree_loglik_grad
from .likelihood import PartialLikelihoods, tree_loglik
from .simulation import l1_covariate, log_l1_truth
from .tree import yule_tree

__all__ = ["fit_loglog_slope", "BenchReport", "BenchPoint", "gradient_task", "run_bench", "autorange"]

BENCH_METHODS = ("approx", "exact", "central-diff")
MIN_REPS = 5


def fit_loglog_slope(points):
    """OLS slope of ``log time`` on ``log S`` and its standard error.

    Needs at least three points and at least two distinct ``S``; collinear
    points give a standard error of 0.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise InputError("slope fit needs at least 3 (S, time) points")
    if np.any(pts <= 0):
        raise InputError("slope fit needs positive S and times")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.ptp(x) == 0:
        raise InputError("slope fit needs at least two distinct S values")
    xc = x - x.mean()
    slope = float(xc @ (y - y.mean()) / (xc @ xc))
    resid = y - y.mean() - slope * xc
    n = x.size
    stderr = float(math.sqrt(max(resid @ resid, 0.0) / (n - 2) / (xc @ xc))) if n > 2 else float("nan")
    return slope, stderr


@dataclass(frozen=True)
class BenchPoint:
    method: str
    S: int
    mean_ms: float
    median_ms: float
    reps: int


@dataclass(frozen=True)
class BenchReport:
    points: tuple
    slopes: dict

    def rows(self):
        return [{"method": p.method, "S": p.S, "mean_ms": p.mean_ms, "median_ms": p.median_ms,
                 "reps": p.reps} for p in self.points]

    def slope_rows(self):
        return [{"method": m, "slope": s, "stderr": e} for m, (s, e) in self.slopes.items()]


def _bench_problem(S, n_tips, seed):
    rng = np.random.default_rng(seed)
    tree = yule_tree(n_tips, rng, height=1.0)
    theta = log_l1_truth(l1_covariate(S))
    rates = normalize(build_rate_matrix(theta, S=S))
    tips_map = simulate_tip_data(rates, tree, rng_seed=int(rng.integers(2 ** 63)))
    tips = np.array([tips_map[k] for k in range(tree.n_tips)])
    return tree, tips, theta, rates


def gradient_task(method, S, n_tips=372, seed=0):
    """Set up caches and return a zero-argument function computing one full gradient."""
    if method not in BENCH_METHODS:
        raise InputError(f"unknown bench method {method!r}; expected one of {BENCH_METHODS}")
    tree, tips, theta, rates = _bench_problem(S, n_tips, seed)
    if method == "central-diff":
        f = theta_loglik_tree(tree, tips)
        return lambda: central_difference_grad(f, theta)
    _, cached = tree_loglik(tree, tips, rates)

    def run():
        # fresh pre-order buffers each call so the timed work is complete
        part = PartialLikelihoods(cached.loglik, cached.P, cached.post, cached.post_scale,
                                  generator=cached.generator, root_dist=cached.root_dist)
        g = tree_loglik_grad(tree, tips, rates, part, method)
        return chain_rule_to_theta(g, rates)
    return run


def autorange(fn, min_time=0.05):
    """Mean seconds per call, looping until at least ``min_time`` has elapsed."""
    n = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(n):
            fn()
        dt = time.perf_counter() - t0
        if dt >= min_time:
            return dt / n
        n = max(n * 2, int(n * min_time / max(dt, 1e-9) * 1.2))


def run_bench(states=(4, 8, 16, 32, 64), methods=("approx", "exact"), reps=5, exact_max_states=16,
              n_tips=372, seed=0, timer=None, min_time=0.05):
    """Time every (method, S) and fit log-log slopes.

    ``timer(method, S, fn)`` returns seconds for one evaluation; the default
    warms ``fn`` once and then uses :func:`autorange`. ``exact`` and
    ``central-diff`` skip state counts above ``exact_max_states``.
    """
    if reps < MIN_REPS:
        raise InputError(f"bench needs at least {MIN_REPS} repetitions, got {reps}")
    unknown = set(methods) - set(BENCH_METHODS)
    if unknown:
        raise InputError(f"unknown bench methods {sorted(unknown)}")
    points = []
    slopes = {}
    with threadpool_limits(limits=1):
        for method in methods:
            sizes = [S for S in states if method == "approx" or S <= exact_max_states]
            if not sizes:
                raise GuardError(f"no state counts for {method!r} within exact_max_states={exact_max_states}")
            for S in sizes:
                fn = gradient_task(method, S, n_tips, seed)
                if timer is None:
                    fn()
                    times = [autorange(fn, min_time) for _ in range(reps)]
                else:
                    times = [float(timer(method, S, fn)) for _ in range(reps)]
                if min(times) <= 0:
                    raise InputError("timer returned a non-positive duration")
                ms = np.array(times) * 1e3
                points.append(BenchPoint(method, S, float(ms.mean()), float(np.median(ms)), reps))
            pts = [(p.S, p.mean_ms) for p in points if p.method == method]
            slopes[method] = fit_loglog_slope(pts) if len(pts) >= 3 else (float("nan"), float("nan"))
    return BenchReport(tuple(points), slopes)
