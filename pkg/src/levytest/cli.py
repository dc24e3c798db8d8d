"""Command-line driver: ``levytest <subcommand> [options]``."""

from __future__ import annotations

import argparse
import math
import os
import sys
from contextlib import contextmanager
from typing import Optional, Sequence

import numpy as np

from . import convergence
from .clrt import CLRTest, ClrtParams, NaiveMeanTest, brownian_approx, brownian_tau, gamma1, gamma_n_sequence, \
    mean_increment, second_moment_and_sigma
from .experiments import ConfigError, ExperimentConfig, base_meta, figure1, figure2, figures345, fitted_tests, \
    write_csv
from .models import ModelError
from .qbp import QBPTest, qbp_distribution, qbpt_error_approx
from .simulation import SamplePath, SimConfig, extract_qbps, simulate_block, simulate_path
from .streams import map_blocks


@contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        d = os.path.dirname(path)
        if d:
            os.makedirs(d, exist_ok=True)
        with open(path, "w", newline="") as fh:
            yield fh


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    return cfg.replace(seed=args.seed, reps=args.reps, xi=getattr(args, "xi", None), x=getattr(args, "x", None),
                       truncate_n=getattr(args, "truncate_n", None), grid_step=getattr(args, "grid_step", None),
                       K=getattr(args, "K", None))


def cmd_dist(args, cfg):
    m0, m1 = cfg.models
    d0 = qbp_distribution(m0, cfg.xi, cfg.K)
    d1 = qbp_distribution(m1, cfg.xi, d0.K)
    from .qbp import pk_table

    p0, p1 = pk_table(m0, cfg.xi, d0.K).p, pk_table(m1, cfg.xi, d0.K).p
    rows = [(k + 1, p0[k], p1[k], d0.masses[k], d1.masses[k]) for k in range(d0.K - 1)]
    rows.append(("lump", None, None, d0.lump, d1.lump))
    with _output(args.out) as fh:
        write_csv(fh, ["k", "p0", "p1", "r0", "r1"], rows, base_meta(cfg, xi=cfg.xi, K_used=d0.K))


def cmd_simulate(args, cfg):
    model = cfg.models[args.hypothesis]
    init = args.init
    try:
        init = float(init)
    except ValueError:
        pass
    sim = SimConfig(xi=cfg.xi, n=args.n, init=init, grid_step=cfg.grid_step, seed=cfg.seed)
    path = simulate_path(model, sim)
    with _output(args.out) as fh:
        meta = base_meta(cfg, xi=cfg.xi, hypothesis=args.hypothesis, n=args.n, init=str(args.init),
                         model=model.to_dict())
        write_csv(fh, [], [], meta)
        path.to_csv(fh)


def _read_input(path):
    with open(path) as fh:
        lines = fh.readlines()
    body = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if not body:
        raise ValueError(f"{path}: no data")
    if body[0].strip() == "R":
        out = []
        for lineno, ln in enumerate(lines, start=1):
            s = ln.strip()
            if not s or s.startswith("#") or s == "R":
                continue
            try:
                r = int(s)
                if r < 1:
                    raise ValueError
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: expected a positive integer QBP length, got {s!r}") from None
            out.append(r)
        return "qbps", np.asarray(out, dtype=np.int64)
    try:
        return "path", SamplePath.from_csv(lines)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def _live_paths(cfg, hyp, n_jobs):
    model = cfg.models[hyp]
    sim = SimConfig(xi=cfg.xi, n=cfg.truncate_n, init="stationary", grid_step=cfg.grid_step)
    return np.concatenate(map_blocks(lambda rng, c: simulate_block(model, sim, rng, c)[0], cfg.reps, cfg.seed,
                                     n_jobs, stream=200 + hyp))


def cmd_qbpt(args, cfg):
    m0, m1 = cfg.models
    test = QBPTest(m0, m1, xi=cfg.xi, K=cfg.K, alpha=cfg.alpha, x1=cfg.x, truncate_n=cfg.truncate_n).fit()
    meta = base_meta(cfg, test="qbpt", xi=cfg.xi, threshold=test.threshold_, gamma=test.gamma_,
                     implied_alpha=float(qbpt_error_approx(test.gamma_, test.threshold_)))
    if args.input:
        kind, data = _read_input(args.input)
        qbps = data if kind == "qbps" else extract_qbps(data).durations
        run = test.run(qbps)
        rows = [(0, run.verdict, run.N if run.N is not None else "", run.ell)]
        meta["input"] = args.input
    else:
        X = _live_paths(cfg, args.hypothesis, args.jobs)
        N, ell, v = test._scan(X)
        names = {1: "reject", -1: "accept", 0: "continue"}
        rows = [(i, names[int(v[i])], int(N[i]) if v[i] else "", ell[i]) for i in range(len(X))]
        meta["hypothesis"] = args.hypothesis
    with _output(args.out) as fh:
        write_csv(fh, ["rep", "verdict", "N", "ell"], rows, meta)


def cmd_clrt(args, cfg):
    m0, m1 = cfg.models
    _, test, g_se = fitted_tests(cfg, cfg.xi, args.jobs)
    implied = math.exp(-test.gamma_ * test.threshold_) if math.isfinite(test.gamma_) else 0.0
    meta = base_meta(cfg, test="clrt", xi=cfg.xi, threshold=test.threshold_, gamma=test.gamma_, gamma_se=g_se,
                     gamma_source=cfg.gamma_source, implied_alpha=implied)
    if args.input:
        kind, data = _read_input(args.input)
        if kind != "path":
            raise ValueError("the CLRT needs a workload path CSV (index,epoch,value,is_zero)")
        v = data.values
        run = test.run(zip(v[:-1], v[1:] == 0.0))
        rows = [(0, "reject" if run.stopped else "continue", run.N if run.N is not None else "", run.ell)]
        meta["input"] = args.input
    else:
        X = _live_paths(cfg, args.hypothesis, args.jobs)
        N = test.stopping_index(X)
        ell = test.decision_function(X)
        rows = [(i, "reject" if N[i] else "continue", int(N[i]) if N[i] else "", ell[i]) for i in range(len(X))]
        meta["hypothesis"] = args.hypothesis
    with _output(args.out) as fh:
        write_csv(fh, ["rep", "verdict", "N", "ell"], rows, meta)


def cmd_naive(args, cfg):
    m0, _ = cfg.models
    test = NaiveMeanTest(m0, xi=cfg.xi, alpha=cfg.alpha, x=args.threshold, truncate_n=cfg.truncate_n,
                         reps=max(cfg.reps, 1000), seed=cfg.seed).fit()
    meta = base_meta(cfg, test="naive", xi=cfg.xi, threshold=test.threshold_)
    if args.input:
        kind, data = _read_input(args.input)
        if kind != "path":
            raise ValueError("the mean test needs a workload path CSV (index,epoch,value,is_zero)")
        X = data.values[None, :]
        meta["input"] = args.input
    else:
        X = _live_paths(cfg, args.hypothesis, args.jobs)
        meta["hypothesis"] = args.hypothesis
    stat = test.decision_function(X)
    rows = [(i, "reject" if s >= test.threshold_ else "continue", "", s) for i, s in enumerate(stat)]
    with _output(args.out) as fh:
        write_csv(fh, ["rep", "verdict", "N", "mean"], rows, meta)


def cmd_perf(args, cfg):
    m0, m1 = cfg.models
    params = ClrtParams(m0, m1, cfg.xi)
    rows = []
    mk = []
    for k in (0, 1):
        m, err = mean_increment(params, k, with_error=True)
        mk.append(m)
        rows.append((f"m{k}", m, err))
    sig = []
    for k in (0, 1):
        s = second_moment_and_sigma(params, k, reps=cfg.sigma_reps, length=cfg.sigma_length, seed=cfg.seed,
                                    n_jobs=args.jobs, m=mk[k])
        sig.append(s)
        rows.append((f"s{k}", s.s, s.s_se))
    for k in (0, 1):
        rows.append((f"sigma{k}sq", sig[k].sigma2, sig[k].sigma2_se))
    x = cfg.x if cfg.x is not None else -math.log(cfg.alpha)
    if not params.degenerate:
        rows.append(("gamma1", gamma1(params), 0.0))
        est = gamma_n_sequence(params, [int(n) for n in cfg.n_grid], reps=cfg.gamma_n_reps, seed=cfg.seed,
                               n_jobs=args.jobs)
        rows += [(f"gamma_n[{int(n)}]", g, s) for n, g, s in zip(est.n, est.gamma, est.se)]
        rows.append((f"alpha_bm[x={x:g}]", float(brownian_approx(mk[0], sig[0].sigma2, x)), math.nan))
        rows.append((f"tau_bm[x={x:g}]", float(brownian_tau(mk[1], x)), math.nan))
    with _output(args.out) as fh:
        write_csv(fh, ["quantity", "value", "se"], rows, base_meta(cfg, xi=cfg.xi, lags=params.lags))


def cmd_converge(args, cfg):
    model = cfg.models[args.hypothesis]
    reps, xi = cfg.converge_reps if args.reps is None else cfg.reps, cfg.xi
    rows = convergence.series_checks(model, xi, cfg.alphas, reps=reps, seed=cfg.seed, n_jobs=args.jobs)
    rows += convergence.absolute_sum_checks(model, xi, cfg.alphas, reps=reps, seed=cfg.seed, n_jobs=args.jobs)
    rows += [convergence.pasta_difference_check(model, xi, "identity", reps=reps, seed=cfg.seed, n_jobs=args.jobs)]
    rows += [convergence.pasta_difference_check(model, xi, "exp", alpha=a, reps=reps, seed=cfg.seed, n_jobs=args.jobs)
             for a in cfg.alphas]
    for a in cfg.alphas:
        b = convergence.absolute_sum_bounds(model, xi, a)
        rows.append(convergence.CheckRow(f"Xi_dominates[alpha={a:g}]", b.lst_sum, b.Xi, 0.0))
    out = [(r.check, r.lhs, r.rhs, r.se, r.zscore if r.se > 0 else math.nan) for r in rows]
    with _output(args.out) as fh:
        write_csv(fh, ["check", "lhs", "rhs", "se", "zscore"], out,
                  base_meta(cfg, xi=xi, reps=reps, n_terms=convergence.DEFAULT_TERMS, hypothesis=args.hypothesis))


def cmd_figures(args, cfg):
    out = args.out or "figures"
    which = set(args.which)
    if "all" in which:
        which = {"fig1", "fig2", "fig3", "fig4", "fig5"}

    def dump(name, header, rows, meta):
        with _output(os.path.join(out, f"{name}.csv")) as fh:
            write_csv(fh, header, rows, base_meta(cfg, figure=name, **meta))

    if "fig1" in which:
        dump("fig1", *figure1(cfg, args.jobs))
    if "fig2" in which:
        dump("fig2", *figure2(cfg, args.jobs))
    if which & {"fig3", "fig4", "fig5"}:
        f3, f4, f5, meta, _ = figures345(cfg, args.jobs)
        for name, (header, rows) in (("fig3", f3), ("fig4", f4), ("fig5", f5)):
            if name in which:
                dump(name, header, rows, dict(meta, quantity={"fig3": "type_I_error", "fig4": "power",
                                                             "fig5": "mean_rejection_index"}[name]))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--reps", type=int, default=None, help="number of replications")
    common.add_argument("--out", default=None, help="output file (directory for 'figures'); default stdout")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    common.add_argument("--xi", type=float, default=None, help="sampling rate")
    common.add_argument("--grid-step", type=float, default=None, help="time step for Gamma input")
    common.add_argument("--K", type=int, default=None, help="QBP truncation")

    p = argparse.ArgumentParser(prog="levytest", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("dist", parents=[common], help="QBP tables p_k and r_k under both hypotheses")
    s = sub.add_parser("simulate", parents=[common], help="simulate one observed workload path")
    s.add_argument("--hypothesis", type=int, choices=(0, 1), default=0)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--init", default="stationary", help="'stationary', 'empty' or a workload value")
    for name, h in (("qbpt", "quasi-busy-period test"), ("clrt", "conditional likelihood-ratio test"),
                    ("naive", "mean-workload threshold test")):
        t = sub.add_parser(name, parents=[common], help=h)
        t.add_argument("--input", help="CSV of a workload path, or of QBP lengths (header 'R')")
        t.add_argument("--hypothesis", type=int, choices=(0, 1), default=0, help="hypothesis for live simulation")
        t.add_argument("--truncate-n", type=int, default=None)
        if name == "naive":
            t.add_argument("--threshold", type=float, default=None, help="mean threshold (default: calibrated)")
        else:
            t.add_argument("--x", type=float, default=None, help="rejection threshold")
    pf = sub.add_parser("perf", parents=[common], help="CLRT performance constants")
    pf.add_argument("--x", type=float, default=None)
    c = sub.add_parser("converge", parents=[common], help="convergence identities against simulation")
    c.add_argument("--hypothesis", type=int, choices=(0, 1), default=0)
    f = sub.add_parser("figures", parents=[common], help="CSV data for the simulation study figures")
    f.add_argument("--which", nargs="+", default=["all"], choices=("all", "fig1", "fig2", "fig3", "fig4", "fig5"))
    f.add_argument("--x", type=float, default=None)
    f.add_argument("--truncate-n", type=int, default=None)
    return p


COMMANDS = {"dist": cmd_dist, "simulate": cmd_simulate, "qbpt": cmd_qbpt, "clrt": cmd_clrt, "naive": cmd_naive,
            "perf": cmd_perf, "converge": cmd_converge, "figures": cmd_figures}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, ModelError, ValueError, ArithmeticError, OSError) as exc:
        print(f"levytest {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
