"""Command-line entry point: ``ctmcgp simulate|infer|grad-check|bench``.

Exit codes: 0 success, 1 input error, 2 numerical error, 3 guard refusal.
"""

import argparse
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import io
from .bench import run_bench
from .ctmc import PairIndex, build_rate_matrix, normalize
from .diagnostics import summarize
from .errors import CTMCError, GuardError, InputError
from .gp import HyperPrior
from .gradients import (
    central_difference_grad, chain_rule_to_theta, lambda_central_difference,
    sequential_loglik_grad, theta_loglik_sequential, theta_loglik_tree, tree_loglik_grad,
)
from .likelihood import sequential_pass, tree_loglik
from .models import CTMCLikelihood, SequentialData, TreeData, normalized_log_rates
from .sampler import HMCConfig, run_chain
from .simulation import build_target, simulate_dataset

GRAD_METHODS = ("exact", "series", "approx", "central-diff")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def build_parser():
    parser = _Parser(prog="ctmcgp", description="Bayesian inference of CTMC rates with GP priors.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in (
        ("simulate", "simulate a dataset from a known truth"),
        ("infer", "sample the posterior of log-rates"),
        ("grad-check", "compare gradient methods against central differences"),
        ("bench", "time full gradient evaluations across state counts"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--states", type=int, help="number of states S")
        p.add_argument("--method", help="comma-separated methods")
        p.add_argument("--reps", type=int, help="bench repetitions")
        p.add_argument("--threads", type=int, help="BLAS threads (bench always uses 1)")
    return parser


def _config(args):
    overrides = {"seed": args.seed, "out": args.out, "states": args.states,
                 "reps": args.reps, "threads": args.threads}
    if args.method:
        key = "bench_methods" if args.command == "bench" else (
            "gradient" if args.command == "infer" else "methods")
        overrides[key] = args.method
    if args.states is not None:
        overrides["labels"] = ""
    return io.load_config(args.config, overrides, check_files=True)


def _out_dir(cfg):
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise InputError(f"cannot create output directory {out}: {e.strerror}") from None
    return out


def _distributions(cfg):
    S = cfg.states
    pi = np.asarray(cfg.pi) if cfg.pi else None
    pi_init = np.asarray(cfg.pi_init) if cfg.pi_init else None
    for name, p in (("pi", pi), ("pi_init", pi_init)):
        if p is not None and p.size != S:
            raise InputError(f"config key {name!r} has {p.size} entries for {S} states")
    return pi, pi_init


def _simulated(cfg, states):
    """Dataset described by ``cfg``; uses tree, covariate and truth files when given."""
    rng = np.random.default_rng(cfg.seed)
    pi, pi_init = _distributions(cfg)
    tree = io.read_newick(cfg.tree) if cfg.tree else None
    x = io.read_covariates(cfg.covariates, states).values[0] if cfg.covariates else None
    if cfg.covariate == "file" and x is None:
        raise InputError("covariate = file needs the covariates key")
    theta = None
    if cfg.truth == "custom-csv":
        if not cfg.truth_file:
            raise InputError("truth = custom-csv needs the truth_file key")
        theta = io.read_pair_table(cfg.truth_file, states)[1][0]
    return simulate_dataset(
        cfg.states, rng, model=cfg.model, truth=cfg.truth, covariate=cfg.covariate,
        quad=(cfg.quad_a, cfg.quad_b, cfg.quad_c), covariate_high=cfg.covariate_high,
        n_tips=cfg.n_tips, tree_height=cfg.tree_height, n_obs=cfg.n_obs,
        obs_interval=cfg.obs_interval, tree=tree, covariate_values=x, theta=theta,
        pi=pi, pi_init=pi_init)


def cmd_simulate(cfg):
    states = io.state_space(cfg)
    data = _simulated(cfg, states)
    out = _out_dir(cfg)
    io.write_pair_table(out / "covariates.csv", states, {n: v for n, v in zip(data.covariates.names, data.covariates.values)})
    io.write_pair_table(out / "truth.csv", states, {"value": data.theta})
    pairs = PairIndex(cfg.states)
    io.write_pair_table(out / "rates.csv", states, {
        "q": pairs.from_matrix(data.rates.Q), "lambda": pairs.from_matrix(data.rates.normalized)})
    if data.tree is not None:
        (out / "tree.nwk").write_text(io.write_newick(data.tree) + "\n", encoding="utf-8")
        io.write_tip_states(out / "tips.csv", data.tree, data.tips, states)
    else:
        io.write_observations(out / "observations.csv", data.obs, states)
    print(f"wrote simulated {cfg.model} data for S={cfg.states} to {out}")
    return 0


def _observed(cfg, states):
    if cfg.model == "tree":
        if not (cfg.tree and cfg.tips):
            raise InputError("model = tree needs the tree and tips keys")
        tree = io.read_newick(cfg.tree)
        tips = io.read_tip_states(cfg.tips, tree, states)
        return TreeData(tree, tips.states)
    if not cfg.observations:
        raise InputError("model = sequential needs the observations key")
    return SequentialData(io.read_observations(cfg.observations, states))


def _hmc_config(cfg):
    return HMCConfig(
        step_size=cfg.step_size, leapfrog_steps=cfg.leapfrog_steps, target_accept=cfg.target_accept,
        warmup_iterations=cfg.warmup, iterations=cfg.iterations, thin=cfg.thin, seed=cfg.seed,
        hyper_every=cfg.hyper_every, hyper_scale=cfg.hyper_scale, hyper_move=cfg.hyper_move, adapt_mass=cfg.adapt_mass)


def cmd_infer(cfg):
    states = io.state_space(cfg)
    if not cfg.covariates:
        raise InputError("infer needs the covariates key")
    covariates = io.read_covariates(cfg.covariates, states)
    data = _observed(cfg, states) if cfg.likelihood else None
    pi, pi_init = _distributions(cfg)
    lik = CTMCLikelihood(data, cfg.states, pi, pi_init, method=cfg.gradient, K=cfg.series_k)
    truth = io.read_pair_table(cfg.truth_file, states)[1][0] if cfg.truth_file else None
    truth_ll = normalized_log_rates(truth, lik.pi) if truth is not None else None
    hyper_priors = [HyperPrior(cfg.rate_sigma2, cfg.rate_ell, cfg.ell_floor)] * covariates.count
    out = _out_dir(cfg)
    priors = ("gp", "loglinear") if cfg.prior == "both" else (cfg.prior,)
    pairs = PairIndex(cfg.states)
    report = []
    for prior in priors:
        target = build_target(prior, lik, covariates, hyper_priors, cfg.kernel, cfg.whitened, cfg.coef_sd)
        with io.SampleWriter(out / f"samples_{prior}.csv", states, target.hyper_names) as writer:
            chain = run_chain(_hmc_config(cfg), target, on_record=writer)
        thetas = chain.thetas()
        if not len(thetas):
            raise InputError("no samples were kept; increase iterations")
        log_lambda = np.array([normalized_log_rates(t, lik.pi) for t in thetas])
        s_theta = summarize(thetas)
        s_ll = summarize(log_lambda, truth_ll)
        rows = []
        for k, (i, j) in enumerate(pairs.pairs()):
            row = {"from": states.labels[i], "to": states.labels[j],
                   "theta_median": s_theta.median[k], "theta_hpdi_lower": s_theta.lower[k],
                   "theta_hpdi_upper": s_theta.upper[k], "theta_ess": s_theta.ess[k],
                   "log_lambda_median": s_ll.median[k], "log_lambda_hpdi_lower": s_ll.lower[k],
                   "log_lambda_hpdi_upper": s_ll.upper[k]}
            if truth_ll is not None:
                row["log_lambda_truth"] = truth_ll[k]
            rows.append(row)
        _write_rows(out / f"summary_{prior}.csv", rows)
        line = (f"{prior}: accept_rate={chain.accept_rate:.3f} step_size={chain.step_size:.4g} "
                f"divergences={chain.divergences} hyper_accept_rate={chain.hyper_accept_rate:.3f}")
        if truth_ll is not None:
            line += (f" rmse_posterior_median={s_ll.rmse_of_median:.4f} "
                     f"median_draw_rmse={s_ll.median_rmse:.4f} hpdi_coverage={s_ll.coverage:.4f}")
        report.append(line)
    (out / "summary.txt").write_text("\n".join(report) + "\n", encoding="utf-8")
    print("\n".join(report))
    return 0


def _write_rows(path, rows):
    keys = list(rows[0])
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(io.fmt(r[k]) if isinstance(r[k], (float, np.floating)) else str(r[k]) for k in keys))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(a @ b / (na * nb)) if na > 0 and nb > 0 else float("nan")


def cmd_gradcheck(cfg):
    methods = tuple(cfg.methods)
    unknown = set(methods) - set(GRAD_METHODS)
    if unknown:
        raise InputError(f"unknown gradient methods {sorted(unknown)}; expected {GRAD_METHODS}")
    if cfg.states > cfg.max_states and {"exact", "central-diff"} & set(methods):
        raise GuardError(
            f"S={cfg.states} exceeds max_states={cfg.max_states} for exact/central-diff gradients; "
            "raise the max_states config key to override")
    states = io.state_space(cfg)
    if (cfg.model == "tree" and cfg.tree and cfg.tips) or (cfg.model == "sequential" and cfg.observations):
        data = _observed(cfg, states)
        sim = _simulated(cfg, states) if not cfg.truth_file else None
        theta = io.read_pair_table(cfg.truth_file, states)[1][0] if cfg.truth_file else sim.theta
    else:
        sim = _simulated(cfg, states)
        theta = sim.theta
        data = TreeData(sim.tree, sim.tips.states) if sim.tree is not None else SequentialData(sim.obs)
    pi, pi_init = _distributions(cfg)
    rates = normalize(build_rate_matrix(theta, S=cfg.states, pi=pi, pi_init=pi_init))
    G = rates.normalized
    lam, th = {}, {}
    if isinstance(data, TreeData):
        _, part = tree_loglik(data.tree, data.tips, rates)
        for m in ("exact", "series", "approx"):
            if m in methods:
                lam[m] = tree_loglik_grad(data.tree, data.tips, rates, part, m, cfg.series_k)
        f_lambda = lambda M: tree_loglik(data.tree, data.tips, M, rates.pi_init, clamp=False)[0]
        f_theta = theta_loglik_tree(data.tree, data.tips, pi, pi_init)
    else:
        cache = sequential_pass(data.obs, rates)
        for m in ("exact", "series", "approx"):
            if m in methods:
                lam[m] = sequential_loglik_grad(data.obs, rates, m, cfg.series_k, cache)
        f_lambda = lambda M: sequential_pass(data.obs, M, clamp=False, pi_init=rates.pi_init).loglik
        f_theta = theta_loglik_sequential(data.obs, pi, pi_init)
    for m, g in lam.items():
        th[m] = chain_rule_to_theta(g, rates)
    if "central-diff" in methods:
        lam["central-diff"] = lambda_central_difference(f_lambda, G)
        th["central-diff"] = central_difference_grad(f_theta, theta)
    rows = []
    S = cfg.states
    for space, grads in (("lambda", lam), ("theta", th)):
        for i in range(S):
            for j in range(S):
                if space == "theta" and i == j:
                    continue
                row = {"space": space, "from": states.labels[i], "to": states.labels[j]}
                for m in methods:
                    row[m.replace("-", "_")] = float(grads[m].matrix[i, j])
                rows.append(row)
    reference = "central-diff" if "central-diff" in methods else ("exact" if "exact" in methods else None)
    summary = []
    for space, grads in (("lambda", lam), ("theta", th)):
        if reference is None:
            break
        ref = grads[reference].matrix.ravel()
        for m in methods:
            if m == reference:
                continue
            v = grads[m].matrix.ravel()
            err = np.abs(v - ref)
            summary.append({"space": space, "method": m, "reference": reference,
                            "max_abs_err": float(err.max()),
                            "max_rel_err": float(err.max() / max(np.abs(ref).max(), 1e-300)),
                            "cosine": _cosine(v, ref)})
    out = _out_dir(cfg)
    table, summ = io.write_gradcheck(rows, summary, out / "gradcheck.csv")
    for s in summary:
        print(f"{s['space']:>6} {s['method']:>8} vs {s['reference']}: max_rel_err={s['max_rel_err']:.3e} "
              f"cosine={s['cosine']:.6f}")
    print(f"wrote {table} and {summ}")
    return 0


def cmd_bench(cfg):
    report = run_bench(states=cfg.bench_states, methods=cfg.bench_methods, reps=cfg.reps,
                       exact_max_states=cfg.exact_max_states, n_tips=cfg.bench_tips, seed=cfg.seed)
    out = _out_dir(cfg)
    _write_rows(out / "bench.csv", report.rows())
    _write_rows(out / "bench_slopes.csv", report.slope_rows())
    for p in report.points:
        print(f"{p.method:>12} S={p.S:<4d} mean={p.mean_ms:.4g} ms median={p.median_ms:.4g} ms")
    for m, (s, e) in report.slopes.items():
        print(f"{m:>12} log-log slope {s:.3f} +- {e:.3f}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "infer": cmd_infer, "grad-check": cmd_gradcheck, "bench": cmd_bench}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = _config(args)
        if args.command == "bench":
            return COMMANDS["bench"](cfg)
        with threadpool_limits(limits=cfg.threads):
            return COMMANDS[args.command](cfg)
    except CTMCError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
