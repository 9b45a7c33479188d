"""Command-line entry point: ``wsn-est {topo,thresholds,run,bench,bounds}``.

Every command writes CSV outputs plus ``manifest.json`` into ``--out``.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import BoundInputs, bounds_table, first_factor_grid, uniform_q_grid
from .config import ESTIMATORS, SimConfig, config_from_dict, config_to_dict, dumps, load
from .errors import ConfigError, NumericalError
from .sim import (bench, monte_carlo, write_bench_csv, write_estimates_trace, write_filter_trace,
                  write_gamma_trace, write_report_csv)
from .thresholds import constraint_residuals, fixed_point_solve, write_psi_csv
from .topology import (THETA_MODES, build_cayley, build_geometric, build_line, expand_generators,
                       read_edge_list, theta_sets, write_edge_list)

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _csv_list(cast):
    def parse(text):
        try:
            return tuple(cast(t) for t in text.split(",") if t.strip())
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def _write_manifest(out: Path, command: str, config: dict | None, seed, outputs, options=None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "master_seed": seed,
        "config": config,
        "options": options or {},
        "outputs": sorted(outputs),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _read_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc


# --- topo / thresholds ------------------------------------------------------------


def _add_topology_args(p):
    p.add_argument("--family", choices=("geometric", "line", "cayley"), default="geometric")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--gen", type=_csv_list(int), default=(1, 3, 4), help="Cayley generators, e.g. 1,3,4")
    p.add_argument("--side", type=float)
    p.add_argument("--radius", type=float)
    p.add_argument("--topology", help="read an edge-list file instead of building a graph")


def _topology_from_args(args):
    if args.topology:
        return read_edge_list(args.topology)
    if args.family == "line":
        return build_line(args.n)
    if args.family == "cayley":
        return build_cayley(args.n, expand_generators(args.gen, args.n))
    return build_geometric(args.n, args.side, args.radius, seed=0 if args.seed is None else args.seed)


def _stats_line(stats: dict) -> str:
    return ("n={n} edges={edges} neighborhood mean={mean_neighborhood:.3f} min={min_neighborhood} "
            "max={max_neighborhood} connected={connected}").format(**stats)


def cmd_topo(args) -> int:
    topo = _topology_from_args(args)
    out = args.out
    write_edge_list(topo, out / "topology.txt")
    stats = topo.stats()
    print(_stats_line(stats))
    _write_manifest(out, "topo", None, args.seed, ["topology.txt"],
                    {k: getattr(args, k) for k in ("family", "n", "gen", "side", "radius", "topology")})
    return 0


def cmd_thresholds(args) -> int:
    topo = _topology_from_args(args)
    theta = theta_sets(topo, None, args.theta_mode)
    tv = fixed_point_solve(theta, args.gamma_max, tol=args.tol, max_iter=args.max_iter)
    res = float(np.abs(constraint_residuals(tv, theta)).max())
    write_psi_csv(tv, args.out / "psi.csv")
    print(f"iterations={tv.iterations} max_residual={res:.3e}")
    _write_manifest(args.out, "thresholds", None, args.seed, ["psi.csv"],
                    {k: getattr(args, k) for k in ("family", "n", "gen", "side", "radius", "topology",
                                                   "gamma_max", "theta_mode", "tol", "max_iter")})
    return 0


# --- run / bench ---------------------------------------------------------------------


def _add_sim_args(p, single: bool):
    p.add_argument("--config", help="INI configuration file (defaults used when omitted)")
    p.add_argument("--manifest", help="re-run exactly what a previous manifest.json describes")
    p.add_argument("--trials", type=int)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--gamma-max", type=float)
    p.add_argument("--length", type=int)
    p.add_argument("--estimators", type=_csv_list(str))
    if single:
        p.add_argument("--signal", choices=("multisine", "piecewise", "constant", "ramp"))
        p.add_argument("--freq-scale", type=float)
        p.add_argument("--q", type=float)
        p.add_argument("--filter-trace", action="store_true", help="also write filter_trace.csv (first trial)")
    p.add_argument("--thresholds-under-losses", action="store_true",
                   help="solve thresholds under one sampled loss realization")


def _resolve_config(args, single: bool):
    """Config plus the master seed, from a manifest or from file, flags and ``--seed``."""
    if args.manifest:
        m = _read_manifest(args.manifest)
        cfg = config_from_dict(m["config"])
        return cfg, cfg.run.seed, m.get("options", {})
    cfg = load(args.config) if args.config else SimConfig().validate()
    upd = {"run": {}, "estimator": {}, "signal": {}, "channel": {}}
    if args.trials is not None:
        upd["run"]["trials"] = args.trials
    if args.estimators:
        bad = [e for e in args.estimators if e not in ESTIMATORS]
        if bad:
            raise ConfigError(f"unknown estimators {bad}; choose from {ESTIMATORS}")
        upd["run"]["estimators"] = tuple(args.estimators)
    if args.seed is not None:
        upd["run"]["seed"] = args.seed
    if args.sigma2 is not None:
        upd["estimator"]["sigma2"] = args.sigma2
    if args.gamma_max is not None:
        upd["estimator"]["gamma_max"] = args.gamma_max
    if args.thresholds_under_losses:
        upd["estimator"]["thresholds_under_losses"] = True
    if args.length is not None:
        upd["signal"]["length"] = args.length
    if single:
        if args.signal:
            upd["signal"]["kind"] = args.signal
        if args.freq_scale is not None:
            upd["signal"]["freq_scale"] = args.freq_scale
        if args.q is not None:
            upd["channel"]["q"] = args.q
    cfg = cfg.replace(**{k: v for k, v in upd.items() if v}).validate()
    options = {"filter_trace": bool(getattr(args, "filter_trace", False))}
    return cfg, cfg.run.seed, options


def cmd_run(args) -> int:
    cfg, seed, options = _resolve_config(args, single=True)
    record = bool(options.get("filter_trace"))
    report = monte_carlo(cfg, jobs=args.jobs, record_filter=record)
    out = args.out
    outputs = ["report.csv", "trace_estimates.csv", "config.cfg"]
    write_report_csv(report, out / "report.csv")
    write_estimates_trace(report, out / "trace_estimates.csv")
    if report.gamma_trace is not None:
        write_gamma_trace(report, out / "trace_gamma.csv")
        outputs.append("trace_gamma.csv")
    if record and report.first_trial.filter_trace is not None:
        write_filter_trace(report.first_trial, out / "filter_trace.csv")
        outputs.append("filter_trace.csv")
    (out / "config.cfg").write_text(dumps(cfg))
    for e in report.estimators:
        chi = report.chi.get(e)
        print(f"{e}: mse={report.mse_mean[e]:.6g} var={report.mse_var[e]:.3g}"
              + ("" if chi is None else f" chi={chi:.3f}"))
    _write_manifest(out, "run", config_to_dict(cfg), seed, outputs, options)
    return 0


def cmd_bench(args) -> int:
    cfg, seed, options = _resolve_config(args, single=False)
    out = args.out
    gamma_path = out / "trace_gamma.csv"
    if gamma_path.exists():
        gamma_path.unlink()
    cells = []
    for label, q, report in bench(cfg, jobs=args.jobs):
        cells.append((label, q, report))
        write_gamma_trace(report, gamma_path, label=label, append=True)
        means = " ".join(f"{e}={report.mse_mean[e]:.4g}" for e in report.estimators)
        print(f"{label} q={q:g}: {means}", flush=True)
    write_bench_csv(cells, out / "report.csv")
    (out / "config.cfg").write_text(dumps(cfg))
    outputs = ["report.csv", "config.cfg"] + (["trace_gamma.csv"] if gamma_path.exists() else [])
    _write_manifest(out, "bench", config_to_dict(cfg), seed, outputs, options)
    return 0


# --- bounds ---------------------------------------------------------------------------


def cmd_bounds(args) -> int:
    out = args.out
    if args.bounds_cmd == "eval":
        p = args.p if args.p is not None else tuple([1.0 - args.q] * (args.m - 1))
        inputs = BoundInputs(n_total=args.n_total, gamma_max=args.gamma_max, sigma2=args.sigma2,
                             p_vector=tuple(p), delta_cap=args.delta_cap)
        rows = bounds_table(inputs)
        width = max(len(k) for k, _ in rows)
        with open(out / "bounds.csv", "w") as fh:
            fh.write("quantity,value\n")
            for k, v in rows:
                print(f"{k:<{width}}  {v:.10g}")
                fh.write(f"{k},{float(v)!r}\n")
        opts = {k: getattr(args, k) for k in ("n_total", "gamma_max", "sigma2", "delta_cap")}
        opts["p"] = list(p)
        _write_manifest(out, "bounds eval", None, None, ["bounds.csv"], opts)
        return 0
    gammas = np.round(np.arange(args.gamma_lo, args.gamma_hi - 1e-12, args.gamma_step), 10)
    qs = np.round(np.arange(0.0, args.q_hi + 1e-12, args.q_step), 10)
    with open(out / "first_factor.csv", "w") as fh:
        fh.write("gamma_max,n_total,factor\n")
        for g, n, f in first_factor_grid(gammas, range(2, args.n_max + 1)):
            fh.write(f"{float(g)!r},{n},{float(f)!r}\n")
    with open(out / "uniform_q.csv", "w") as fh:
        fh.write("q,m,factor\n")
        for q, m, f in uniform_q_grid(qs, range(1, args.m_max + 1)):
            fh.write(f"{float(q)!r},{m},{float(f)!r}\n")
    print(f"wrote {len(gammas) * (args.n_max - 1)} first-factor and {len(qs) * args.m_max} loss-factor values")
    opts = {k: getattr(args, k) for k in ("gamma_lo", "gamma_hi", "gamma_step", "n_max", "q_hi", "q_step", "m_max")}
    _write_manifest(out, "bounds grid", None, None, ["first_factor.csv", "uniform_q.csv"], opts)
    return 0


# --- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS,
                        help="worker processes (default: available cores)")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory (default: .)")

    parser = argparse.ArgumentParser(prog="wsn-est", parents=[common],
                                     description="Distributed estimation over lossy sensor networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("topo", parents=[common], help="build a graph, write its edge list and stats")
    _add_topology_args(p)
    p.set_defaults(func=cmd_topo)

    p = sub.add_parser("thresholds", parents=[common], help="solve the per-node weight thresholds")
    _add_topology_args(p)
    p.add_argument("--gamma-max", type=float, required=True)
    p.add_argument("--theta-mode", choices=THETA_MODES, default="two_hop")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("run", parents=[common], help="Monte Carlo run of one configuration")
    _add_sim_args(p, single=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", parents=[common], help="sweep signals x loss levels")
    _add_sim_args(p, single=False)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("bounds", parents=[common], help="closed-form bounds")
    bsub = p.add_subparsers(dest="bounds_cmd", required=True)
    e = bsub.add_parser("eval", parents=[common], help="all quantities for one input set")
    e.add_argument("--n-total", type=int, required=True)
    e.add_argument("--gamma-max", type=float, required=True)
    e.add_argument("--sigma2", type=float, default=1.5)
    e.add_argument("--delta-cap", type=float, default=0.0)
    e.add_argument("--p", type=_csv_list(float), help="success probability of each other neighbor")
    e.add_argument("--q", type=float, default=0.0, help="uniform loss, used with --m when --p is absent")
    e.add_argument("--m", type=int, default=1, help="closed-neighborhood size for uniform loss")
    g = bsub.add_parser("grid", parents=[common], help="figure grids as CSV")
    g.add_argument("--gamma-lo", type=float, default=0.5)
    g.add_argument("--gamma-hi", type=float, default=1.0)
    g.add_argument("--gamma-step", type=float, default=0.01)
    g.add_argument("--n-max", type=int, default=100)
    g.add_argument("--q-hi", type=float, default=0.3)
    g.add_argument("--q-step", type=float, default=0.01)
    g.add_argument("--m-max", type=int, default=20)
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed = getattr(args, "seed", None)
    args.jobs = getattr(args, "jobs", None) or os.cpu_count() or 1
    args.out = getattr(args, "out", Path("."))
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
