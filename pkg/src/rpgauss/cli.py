"""Command-line entry point: run orchestration and report emission.

One command per invocation; all randomness flows from the root seed through
the counter-based stream derivation documented in the sampling module.  The
report path writes a JSON report, optional CSV tables, and (for the table
commands) matplotlib figures alongside the delimited output.  The exit code
is 0 iff every requested verdict passes.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import plots
from .config import RunConfig, load_config
from .constraints import (ConstraintSet, constrained_covariance, lattice_penalized_exact,
                          penalized_covariance, theorem2_sweep)
from .errors import ConfigError, RpgaussError
from .free import Mollifier, free_covariance, sample_gff, save_field
from .interaction import (ZeroLagrangian, _block_sizes, check_schedule, estimate_ratio,
                          select_epsilon)
from .regions import Ball
from .report import (build_report, info_result, numeric_result, verdict, write_csv,
                     write_json)
from .verify import (EuclideanTransform, MCParams, calibrate_invariance_constant,
                     invariance_gap, markov_check, rp_gram)

COMMANDS = ("covariance", "sample", "estimate", "constrain-sweep", "verify-rp",
            "verify-invariance", "verify-markov", "schedule-check")


def _mollifier(cfg: RunConfig, lam: float) -> Mollifier:
    if cfg.quad.scheme == "lattice-momentum-sum":
        return Mollifier.for_lattice(cfg.spec, lam)
    return Mollifier(cfg.spec.D, lam)


def _constraints(cfg: RunConfig) -> ConstraintSet:
    return cfg.constraints if cfg.constraints is not None else ConstraintSet(ops=())


def _require(params: dict, key: str, command: str):
    if key not in params:
        raise ConfigError(f"commands.{command}: missing required parameter {key!r}")
    return params[key]


def _lagrangian(cfg: RunConfig):
    return cfg.lagrangian if cfg.lagrangian is not None else ZeroLagrangian()


def _schedule_point(cfg: RunConfig, n: int):
    if cfg.schedule is None:
        raise ConfigError("this command needs a schedule block")
    return cfg.schedule.at(int(n))


def _mc(cfg: RunConfig) -> MCParams:
    if cfg.mc_samples is None:
        raise ConfigError("this command needs an mc block with a sample count")
    return MCParams(samples=cfg.mc_samples, seed=cfg.seed)


def _seed_paths(cfg: RunConfig):
    if cfg.mc_samples is None:
        return []
    return [[cfg.seed, b] for b in range(len(_block_sizes(cfg.mc_samples)))]


# ---------------------------------------------------------------------------
# Command handlers: each returns (results, verdicts, tables, plot_jobs, seed_paths)


def _cmd_covariance(cfg: RunConfig, params: dict):
    f = cfg.test_function(_require(params, "f", "covariance"))
    g = cfg.test_function(_require(params, "g", "covariance"))
    mode = params.get("mode", "free")
    cs = _constraints(cfg)
    if mode == "free":
        value = free_covariance(f, g, cfg.quad)
    elif mode == "constrained":
        value = constrained_covariance(f, g, cs, cfg.quad)
    elif mode == "penalized":
        a = float(_require(params, "a", "covariance"))
        lam = float(_require(params, "lam", "covariance"))
        value = penalized_covariance(f, g, cs, a, _mollifier(cfg, lam), cfg.quad)
    elif mode == "lattice-exact":
        a = float(_require(params, "a", "covariance"))
        lam = params.get("lam")
        r = float(_require(params, "r", "covariance"))
        moll = None if lam is None else _mollifier(cfg, float(lam))
        value = lattice_penalized_exact(f, g, cs, a, moll, r, cfg.spec)
    else:
        raise ConfigError(f"commands.covariance: unknown mode {mode!r}")
    results = [numeric_result("covariance", value, exact=True, mode=mode)]
    return results, [], {}, [], []


def _cmd_sample(cfg: RunConfig, params: dict, out_dir: str):
    field = sample_gff(cfg.spec, cfg.seed)
    base = os.path.join(out_dir, params.get("basename", "field"))
    save_field(field, base, seed=cfg.seed)
    results = [
        info_result("snapshot", base + ".bin"),
        numeric_result("field_mean", float(field.data.mean()), exact=True),
        numeric_result("field_variance", float(field.data.var()), exact=True),
    ]
    return results, [], {}, [], [[cfg.seed, 0]]


def _cmd_estimate(cfg: RunConfig, params: dict):
    F = cfg.observable(_require(params, "observable", "estimate"))
    mc = _mc(cfg)
    if "n" in params:
        pt = _schedule_point(cfg, params["n"])
        r, lam = pt.r, pt.lam
    else:
        r = params.get("r")
        lam = params.get("lam")
    region = None if r is None else Ball(center=(0.0,) * cfg.spec.D, radius=float(r))
    moll = None if lam is None else _mollifier(cfg, float(lam))
    L = _lagrangian(cfg)
    eps_results = []
    if params.get("select_eps_n"):
        n = int(params["select_eps_n"])
        if region is None:
            raise ConfigError("commands.estimate: eps selection needs an interaction region")
        eps, disc, disc_se = select_epsilon(n, L, cfg.spec, region, moll,
                                            mc.samples, mc.seed)
        from .interaction import bound_lagrangian
        L = bound_lagrangian(L, eps)
        eps_results = [
            numeric_result("selected_eps", eps, exact=True),
            numeric_result("partition_discrepancy", disc, stderr=disc_se),
        ]
    res = estimate_ratio(F, L, cfg.spec, region, moll, mc.samples, mc.seed)
    results = eps_results + [
        numeric_result("ratio", res.value, stderr=res.stderr),
        numeric_result("ess", res.ess, exact=True),
        numeric_result("n_blocks", float(res.n_blocks), exact=True),
    ]
    return results, [], {}, [], _seed_paths(cfg)


def _cmd_constrain_sweep(cfg: RunConfig, params: dict):
    f = cfg.test_function(_require(params, "f", "constrain-sweep"))
    g = cfg.test_function(_require(params, "g", "constrain-sweep"))
    cs = _constraints(cfg)
    if cfg.schedule is None:
        raise ConfigError("constrain-sweep needs a schedule block")
    n_values = params.get("n_values", list(range(1, 7)))
    tol = float(params.get("gap_tolerance", 1e-3))
    sweep = theorem2_sweep(f, g, cs, cfg.schedule, cfg.spec,
                           n_values=[int(n) for n in n_values], gap_tolerance=tol)
    fieldnames = ["n", "a", "lam", "r", "C_aLr", "C_aLinf", "C_kappa",
                  "gap_volume", "gap_penalty", "gap_total"]
    rows = [{k: getattr(row, k) for k in fieldnames} for row in sweep.rows]
    results = [
        info_result("limit_diagnostic", sweep.limit_message),
        numeric_result("final_gap", sweep.rows[-1].gap_total, exact=True),
    ]
    verdicts = [verdict("penalty-gap-trend", sweep.rows[-1].gap_total, tol,
                        sweep.converged, n_values=[int(n) for n in n_values])]
    tables = {"constrain-sweep": (fieldnames, rows)}
    plot_jobs = [(plots.plot_sweep, rows, "constrain-sweep.png")]
    return results, verdicts, tables, plot_jobs, []


def _cmd_verify_rp(cfg: RunConfig, params: dict):
    names = _require(params, "observables", "verify-rp")
    F_list = [cfg.observable(n) for n in names]
    pt = _schedule_point(cfg, params.get("n", 1))
    method = params.get("method", "mc")
    region_mode = params.get("region_mode", "full-ball")
    mc = _mc(cfg) if method == "mc" else MCParams(samples=2, seed=cfg.seed)
    res = rp_gram(F_list, _lagrangian(cfg), pt, cfg.spec, mc,
                  region_mode=region_mode, method=method)
    threshold = -1e-12 if method == "closed-form" else -4.0 * res.stderr
    results = [
        numeric_result("min_eigenvalue", res.min_eigenvalue,
                       stderr=res.stderr if method == "mc" else None,
                       exact=method == "closed-form"),
        info_result("gram", [list(map(float, row)) for row in res.gram]),
    ]
    verdicts = [verdict("reflection-positivity", res.min_eigenvalue, threshold,
                        res.min_eigenvalue >= threshold, method=method,
                        region=region_mode, n=int(params.get("n", 1)),
                        delta=res.delta, m=len(F_list))]
    return results, verdicts, {}, [], _seed_paths(cfg) if method == "mc" else []


def _transform_from_params(d: dict) -> EuclideanTransform:
    kind = _require(d, "kind", "verify-invariance.transform")
    if kind == "translation":
        return EuclideanTransform(kind="translation", steps=tuple(int(s) for s in d["steps"]))
    if kind == "permutation":
        return EuclideanTransform(kind="permutation", perm=tuple(int(p) for p in d["perm"]))
    if kind in ("flip", "time-reflection"):
        return EuclideanTransform(kind="flip", axis=int(d["axis"]))
    raise ConfigError(f"unknown transform kind {kind!r}")


def _cmd_verify_invariance(cfg: RunConfig, params: dict):
    F = cfg.observable(_require(params, "observable", "verify-invariance"))
    T = _transform_from_params(_require(params, "transform", "verify-invariance"))
    n_values = [int(n) for n in params.get("n_values", [1, 2, 3, 4, 5])]
    mc = _mc(cfg)
    L = _lagrangian(cfg)
    c0 = params.get("c0")
    if c0 is None:
        pt0 = _schedule_point(cfg, n_values[0])
        c0 = calibrate_invariance_constant(F, T, L, pt0, cfg.spec, mc,
                                           safety=float(params.get("safety", 1.5)))
    rows, verdicts = [], []
    for n in n_values:
        pt = _schedule_point(cfg, n)
        res = invariance_gap(F, T, L, pt, cfg.spec, mc, c0=float(c0))
        rows.append({"n": n, "gap": res.gap, "stderr": res.stderr, "bound": res.bound})
        verdicts.append(verdict("invariance-gap", res.gap,
                                res.bound + 3 * res.stderr,
                                res.gap <= res.bound + 3 * res.stderr, n=n))
    results = [numeric_result("c0", float(c0), exact=True)] + [
        numeric_result(f"gap_n{r['n']}", r["gap"], stderr=r["stderr"]) for r in rows
    ]
    fieldnames = ["n", "gap", "stderr", "bound"]
    tables = {"verify-invariance": (fieldnames, rows)}
    plot_jobs = [(plots.plot_invariance, rows, "verify-invariance.png")]
    return results, verdicts, tables, plot_jobs, _seed_paths(cfg)


def _cmd_verify_markov(cfg: RunConfig, params: dict):
    width = int(params.get("band_width", 1))
    threshold = float(params.get("threshold", 1e-10))
    probes = params.get("probes")
    if probes is not None:
        probes = [(tuple(int(i) for i in x), tuple(int(i) for i in y)) for x, y in probes]
    stat = markov_check(cfg.spec, width, probes=probes)
    passed = stat < threshold if width >= 1 else stat > 0.0
    results = [numeric_result("max_conditional_covariance", stat, exact=True)]
    verdicts = [verdict("markov-property", stat, threshold if width >= 1 else 0.0,
                        passed, band_width=width)]
    return results, verdicts, {}, [], []


def _cmd_schedule_check(cfg: RunConfig, params: dict):
    if cfg.schedule is None:
        raise ConfigError("schedule-check needs a schedule block")
    chk = check_schedule(cfg.schedule)
    g, e, q = cfg.schedule.ratio_exponents()
    results = [
        info_result("reason", chk.reason),
        info_result("ratio_exponents", {"geo": g, "exponent": e, "log_power": q}),
    ]
    if chk.monotone_from is not None:
        results.append(numeric_result("monotone_from", float(chk.monotone_from), exact=True))
    verdicts = [verdict("schedule-sufficiency", e, 0.0, chk.passed)]
    return results, verdicts, {}, [], []


# ---------------------------------------------------------------------------


def run(command: str, cfg: RunConfig, out_dir: str, fmt: str = "json",
        render_plots: bool = True) -> dict:
    """Dispatch a command and write its report (and tables/figures) to out_dir."""
    t0 = time.monotonic()
    os.makedirs(out_dir, exist_ok=True)
    params = cfg.command_params(command)
    if command == "covariance":
        out = _cmd_covariance(cfg, params)
    elif command == "sample":
        out = _cmd_sample(cfg, params, out_dir)
    elif command == "estimate":
        out = _cmd_estimate(cfg, params)
    elif command == "constrain-sweep":
        out = _cmd_constrain_sweep(cfg, params)
    elif command == "verify-rp":
        out = _cmd_verify_rp(cfg, params)
    elif command == "verify-invariance":
        out = _cmd_verify_invariance(cfg, params)
    elif command == "verify-markov":
        out = _cmd_verify_markov(cfg, params)
    elif command == "schedule-check":
        out = _cmd_schedule_check(cfg, params)
    else:
        raise ConfigError(f"unknown command {command!r}")
    results, verdicts, tables, plot_jobs, seed_paths = out

    artifacts = []
    if fmt in ("csv", "both"):
        for name, (fieldnames, rows) in tables.items():
            path = os.path.join(out_dir, f"{name}.csv")
            write_csv(fieldnames, rows, path)
            artifacts.append(path)
    if render_plots:
        for plot_fn, rows, fname in plot_jobs:
            artifacts.append(plot_fn(rows, os.path.join(out_dir, fname)))

    table_echo = {name: rows for name, (_, rows) in tables.items()} or None
    report = build_report(command, cfg.emit(), cfg.seed, results, verdicts, t0,
                          seed_paths=seed_paths, tables=table_echo, artifacts=artifacts)
    if fmt in ("json", "both"):
        write_json(report, os.path.join(out_dir, f"report-{command}.json"))
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rpgauss",
        description="Euclidean-invariant reflection-positive Gaussian field toolkit",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path to the JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="limit BLAS/FFT thread pools (best effort)")
    parser.add_argument("--format", choices=("json", "csv", "both"), default="both")
    parser.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    args = parser.parse_args(argv)

    if args.threads is not None:
        try:
            from threadpoolctl import threadpool_limits
            threadpool_limits(limits=args.threads)
        except ImportError:
            print("warning: threadpoolctl not installed; --threads ignored", file=sys.stderr)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            doc = cfg.emit()
            doc["seed"] = args.seed
            from .config import parse_config
            cfg = parse_config(doc)
        report = run(args.command, cfg, args.out, fmt=args.format,
                     render_plots=not args.no_plots)
    except RpgaussError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    for v in report["verdicts"]:
        status = "PASS" if v["pass"] else "FAIL"
        print(f"[{status}] {v['check']}: statistic={v['statistic']} "
              f"threshold={v['threshold']}")
    if not report["verdicts"]:
        for r in report["results"]:
            print(f"{r['name']}: {r['value']}")
    return 0 if report["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
