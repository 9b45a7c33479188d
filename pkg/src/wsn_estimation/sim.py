"""Synchronous-round simulation engine and Monte Carlo harness.

One trial draws a topology, per-link loss probabilities and the noise/loss
sequence from its own seed, solves the thresholds once on the loss-free
graph and then steps every enabled estimator on the same ``(u, phi)``
stream. ``monte_carlo`` runs independent trials and aggregates MSEs.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import baseline_matrices
from .bounds import multiplier_sup_bound
from .channel import loss_model, sample_realization
from .config import SignalSpec, SimConfig
from .errors import NumericalError
from .filter import ProposedEstimator
from .thresholds import fixed_point_solve
from .topology import (Topology, build_cayley, build_geometric, build_line, expand_generators,
                       from_edges, read_edge_list, theta_sets)

# multisine design at freq_scale 1: periods in steps and relative amplitudes
_PERIODS = (240.0, 150.0, 95.0)
_WEIGHTS = (0.5, 0.3, 0.2)
_GATE_PERIOD = 180.0
_GATE_DEPTH = 0.8
_KNOT_SPACING = 40.0

BASELINES = ("E1", "E2", "E3", "E4")


# --- signals -------------------------------------------------------------------


def generate_signal(spec: SignalSpec, rng=None):
    """Sample ``d(0..length-1)`` and return it with the realized max step ``Delta``.

    ``multisine`` is three incommensurate sinusoids whose common phase
    advances at a slowly gated speed between ``1 - 0.8`` and ``1 + 0.8``,
    so the signal alternates flat and steep stretches; ``freq_scale``
    multiplies every frequency including the gate. All components and the
    gate peak together at one seeded instant inside the unscaled window.
    ``piecewise`` is linear interpolation through uniform knots. The
    instant, the sign and the knots come from ``rng`` (default: seeded by
    ``spec.seed``).
    """
    spec.validate()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.length, dtype=float)
    if spec.kind == "constant":
        d = np.full(spec.length, float(spec.level))
    elif spec.kind == "ramp":
        d = spec.level + spec.slope * t
    elif spec.kind == "multisine":
        # every component is steepest at tau0, which lies inside the unscaled window,
        # so the realized Delta grows in proportion to freq_scale
        tau0 = rng.uniform(0.2, 0.8) * (spec.length - 1)
        sign = rng.choice((-1.0, 1.0))
        wg = 2.0 * math.pi / _GATE_PERIOD
        gate_ph = -wg * tau0
        tau = spec.freq_scale * t

        def warp(x):
            return x + _GATE_DEPTH * (np.sin(wg * x + gate_ph) - math.sin(gate_ph)) / wg

        warped, w0 = warp(tau), warp(tau0)
        d = np.zeros(spec.length)
        for period, weight in zip(_PERIODS, _WEIGHTS):
            om = 2.0 * math.pi / period
            d += weight * np.sin(om * (warped - w0))
        d *= sign * spec.amplitude
    else:
        spacing = _KNOT_SPACING / spec.freq_scale
        n_knots = int(math.ceil((spec.length - 1) / spacing)) + 1
        knots_t = np.arange(n_knots) * spacing
        knots_v = rng.uniform(-spec.amplitude, spec.amplitude, size=n_knots)
        d = np.interp(t, knots_t, knots_v)
    delta = float(np.abs(np.diff(d)).max()) if d.size > 1 else 0.0
    return d, delta


def select_gamma_max(config: SimConfig, delta: float) -> float:
    """Contraction bound from the bias-power target and the inflated ``Delta``."""
    est = config.estimator
    if est.gamma_max is not None:
        return est.gamma_max
    root = math.sqrt(10.0 ** (est.upsilon_db / 10.0))
    d = est.delta_inflation * delta
    return min(root / (root + d), est.gamma_max_cap)


# --- topology and seeds ----------------------------------------------------------


def build_topology(config: SimConfig, seed=None) -> Topology:
    tc = config.topology
    if tc.family == "geometric":
        return build_geometric(tc.n, tc.side, tc.radius, seed=seed)
    if tc.family == "line":
        return build_line(tc.n)
    if tc.family == "cayley":
        return build_cayley(tc.n, expand_generators(tc.generators, tc.n))
    if tc.family == "star":
        return from_edges(tc.n, [(0, j) for j in range(1, tc.n)])
    return read_edge_list(tc.path)


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def _child(ss: np.random.SeedSequence, k: int) -> np.random.SeedSequence:
    # spawn() mutates a counter; deriving keys explicitly keeps reruns identical
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (k,))


def trial_seeds(master_seed: int, trials: int) -> list:
    root = np.random.SeedSequence(int(master_seed))
    return [_child(root, k) for k in range(trials)]


# --- metrics -----------------------------------------------------------------------


def mse(errors, warmup: int) -> float:
    """Mean of squared errors over steps ``t > warmup`` and all nodes.

    ``errors`` has shape ``(steps, nodes)``. Non-finite traces (a diverging
    estimator) give ``inf``.
    """
    e = np.asarray(errors, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    if warmup >= e.shape[0] - 1:
        raise ValueError(f"warmup {warmup} leaves no steps in a trace of length {e.shape[0]}")
    tail = e[warmup + 1:]
    if not np.isfinite(tail).all():
        return math.inf
    with np.errstate(over="ignore"):
        val = float(np.mean(tail ** 2))
    return val


def improvement_factor(mse_baseline: float, mse_proposed: float) -> float:
    """``(MSE_i - MSE_p) / MSE_i`` with the limits spelled out for 0 and inf."""
    if math.isinf(mse_baseline):
        return 1.0 if math.isfinite(mse_proposed) else math.nan
    if mse_baseline == 0.0:
        return 0.0 if mse_proposed == 0.0 else -math.inf
    return (mse_baseline - mse_proposed) / mse_baseline


def improvement_factors(report) -> dict:
    """``{"E1": chi_1, ...}`` for every baseline present alongside ``Ep``."""
    means = report.mse_mean
    if "Ep" not in means:
        return {}
    return {e: improvement_factor(means[e], means["Ep"]) for e in BASELINES if e in means}


def _mean_var(values: np.ndarray):
    if not np.isfinite(values).all():
        return math.inf, math.inf
    return float(values.mean()), float(values.var())


# --- results -------------------------------------------------------------------------


@dataclass
class TrialResult:
    estimators: tuple
    signal: np.ndarray
    estimates: dict
    mse: dict
    gamma_max: float
    delta: float
    psi: np.ndarray
    threshold_iterations: int
    topology: dict
    gamma_trace: np.ndarray | None = None
    invariants: dict = field(default_factory=dict)
    filter_trace: dict | None = None


@dataclass
class SimReport:
    """Aggregate over trials (a single trial is a report with ``trials == 1``).

    ``mean_error`` holds the trial-averaged error vector per step for each
    estimator; ``bias_trace`` is its Euclidean norm per step.
    """

    estimators: tuple
    q: float
    trials: int
    warmup: int
    signal: np.ndarray
    delta: float
    gamma_max: float
    mse_trials: dict
    mse_mean: dict
    mse_var: dict
    chi: dict
    gamma_trace: np.ndarray | None
    mean_error: dict
    bias_trace: dict
    threshold_iterations: np.ndarray
    invariants: dict
    first_trial: TrialResult

    def bias_norm(self, estimator: str = "Ep", start: int | None = None) -> float:
        """Norm of the error vector averaged over trials and steps ``t > start``."""
        start = self.warmup if start is None else start
        return float(np.linalg.norm(self.mean_error[estimator][start + 1:].mean(axis=0)))


# --- one trial ---------------------------------------------------------------------


def run_trial(config: SimConfig, trial_seed, record_filter: bool = False) -> TrialResult:
    """Simulate one seeded trial of every enabled estimator.

    Raises:
        NumericalError: from the threshold solve or the adaptive filter,
            tagged with the failing step.
    """
    config.validate()
    ss = _seed_sequence(trial_seed)
    topo_rng, loss_rng, dyn_rng = (np.random.default_rng(_child(ss, k)) for k in range(3))
    topo = build_topology(config, topo_rng)
    n = topo.n
    d, delta = generate_signal(config.signal)
    gamma_max = select_gamma_max(config, delta)
    est = config.estimator
    ch = config.channel
    model = loss_model(topo, ch.q, min(ch.jitter, ch.q), seed=loss_rng)

    enabled = tuple(config.run.estimators)
    psi = np.zeros(n)
    iterations = 0
    proposed = None
    if "Ep" in enabled:
        fixed = sample_realization(model, loss_rng, ch.symmetric_losses) if est.thresholds_under_losses else None
        theta = theta_sets(topo, fixed, est.theta_mode)
        target = gamma_max ** 2 if est.stability_target == "spectral" else gamma_max
        tv = fixed_point_solve(theta, target, tol=est.threshold_tol, max_iter=est.threshold_max_iter)
        psi, iterations = tv.psi, tv.iterations
        proposed = ProposedEstimator(topo.adjacency, psi, est.sigma2, est.forgetting, est.bisection_tol,
                                     est.noise_correction)

    steps = config.signal.length
    sigma = math.sqrt(est.sigma2)
    x = {e: np.zeros((steps, n)) for e in enabled}
    gamma_trace = np.zeros(steps) if proposed else None
    inv = {"row_sum_error": 0.0, "norm_excess": -math.inf, "gamma_excess": -math.inf,
           "multiplier_checks": 0, "multiplier_violations": 0}
    lam_bound = multiplier_sup_bound(n, gamma_max, est.sigma2)
    ftrace = None
    if proposed and record_filter:
        ftrace = {"lambda": np.zeros((steps, n)), "k_norm2": np.zeros((steps, n)), "K": np.zeros((steps, n, n))}

    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps):
            phi = sample_realization(model, dyn_rng, ch.symmetric_losses).phi
            u = d[t] + sigma * dyn_rng.standard_normal(n)
            if t == 0:
                for e in enabled:
                    x[e][0] = u
                if proposed:
                    proposed.start(u, phi)
                continue
            for e in enabled:
                prev = x[e][t - 1]
                if e == "Ep":
                    try:
                        x[e][t] = proposed.step(prev, u, phi)
                    except NumericalError as exc:
                        exc.step = t
                        raise
                else:
                    k, h = baseline_matrices(e, phi)
                    x[e][t] = k @ prev + h @ u
            if proposed:
                kmat, hmat = proposed.K, proposed.H
                inv["row_sum_error"] = max(inv["row_sum_error"], float(np.abs((kmat + hmat).sum(axis=1) - 1.0).max()))
                knorm2 = (kmat ** 2).sum(axis=1)
                inv["norm_excess"] = max(inv["norm_excess"], float((knorm2 - psi).max()))
                g = float(np.linalg.norm(kmat, 2))
                gamma_trace[t] = g
                inv["gamma_excess"] = max(inv["gamma_excess"], g - gamma_max)
                diag_ok = np.array([proposed.gamma_hat[i][phi[i]][:, phi[i]].diagonal().max() <= est.sigma2
                                    for i in range(n)])
                inv["multiplier_checks"] += int(diag_ok.sum())
                inv["multiplier_violations"] += int((diag_ok & (proposed.ell_max >= lam_bound)).sum())
                if ftrace is not None:
                    ftrace["lambda"][t] = proposed.lam
                    ftrace["k_norm2"][t] = knorm2
                    ftrace["K"][t] = kmat

    mses = {e: mse(x[e] - d[:, None], config.run.warmup) for e in enabled}
    return TrialResult(estimators=enabled, signal=d, estimates=x, mse=mses, gamma_max=gamma_max,
                       delta=delta, psi=psi, threshold_iterations=iterations, topology=topo.stats(),
                       gamma_trace=gamma_trace, invariants=inv if proposed else {}, filter_trace=ftrace)


# --- Monte Carlo -------------------------------------------------------------------


def _trial_job(args):
    config, seed, record = args
    return run_trial(config, seed, record_filter=record)


def aggregate(config: SimConfig, results: list) -> SimReport:
    first = results[0]
    enabled = first.estimators
    d = first.signal
    mse_trials = {e: np.array([r.mse[e] for r in results]) for e in enabled}
    mean_var = {e: _mean_var(v) for e, v in mse_trials.items()}
    with np.errstate(over="ignore", invalid="ignore"):
        mean_error = {e: np.mean([r.estimates[e] - d[:, None] for r in results], axis=0) for e in enabled}
        bias_trace = {e: np.linalg.norm(v, axis=1) for e, v in mean_error.items()}
    gamma_trace = None
    invariants = {}
    if "Ep" in enabled:
        gamma_trace = np.max([r.gamma_trace for r in results], axis=0)
        for key in first.invariants:
            vals = [r.invariants[key] for r in results]
            invariants[key] = sum(vals) if key.startswith("multiplier") else max(vals)
    report = SimReport(
        estimators=enabled, q=config.channel.q, trials=len(results), warmup=config.run.warmup,
        signal=d, delta=first.delta, gamma_max=first.gamma_max, mse_trials=mse_trials,
        mse_mean={e: mv[0] for e, mv in mean_var.items()}, mse_var={e: mv[1] for e, mv in mean_var.items()},
        chi={}, gamma_trace=gamma_trace, mean_error=mean_error, bias_trace=bias_trace,
        threshold_iterations=np.array([r.threshold_iterations for r in results]),
        invariants=invariants, first_trial=first)
    report.chi = improvement_factors(report)
    return report


def monte_carlo(config: SimConfig, jobs: int = 1, record_filter: bool = False) -> SimReport:
    """Run ``config.run.trials`` independent trials and aggregate them.

    Trial ``k`` always gets the ``k``-th child of ``SeedSequence(master_seed)``,
    so results do not depend on ``jobs`` or scheduling.
    """
    config.validate()
    seeds = trial_seeds(config.run.seed, config.run.trials)
    args = [(config, s, record_filter and k == 0) for k, s in enumerate(seeds)]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
            results = list(pool.map(_trial_job, args))
    else:
        results = [_trial_job(a) for a in args]
    return aggregate(config, results)


def bench(config: SimConfig, jobs: int = 1):
    """Sweep ``freq_scales x q_levels``; yields ``(label, q, report)`` in grid order."""
    for idx, scale in enumerate(config.bench.freq_scales, start=1):
        for q in config.bench.q_levels:
            cell = config.replace(signal={"freq_scale": float(scale)}, channel={"q": float(q)})
            yield f"d{idx}", float(q), monte_carlo(cell, jobs=jobs)


# --- CSV output ----------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def report_rows(report: SimReport):
    for e in report.estimators:
        yield [e, _fmt(report.q), _fmt(report.mse_mean[e]), _fmt(report.mse_var[e]), _fmt(report.chi.get(e))]


def write_report_csv(report: SimReport, path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["estimator", "q", "mse_mean", "mse_var", "chi"])
        w.writerows(report_rows(report))


def write_bench_csv(cells, path) -> None:
    """``cells`` is an iterable of ``(signal_label, q, report)``."""
    fh, w = _writer(path)
    with fh:
        w.writerow(["signal", "estimator", "q", "mse_mean", "mse_var", "chi"])
        for label, _, report in cells:
            for row in report_rows(report):
                w.writerow([label] + row)


def write_gamma_trace(report: SimReport, path, label: str | None = None, append: bool = False) -> None:
    if report.gamma_trace is None:
        return
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow((["signal", "q"] if label else []) + ["t", "gamma_K"])
        for t, g in enumerate(report.gamma_trace):
            w.writerow(([label, _fmt(report.q)] if label else []) + [t, _fmt(g)])


def write_estimates_trace(report: SimReport, path) -> None:
    """First trial's estimates next to the true signal, one row per (t, estimator, node)."""
    first = report.first_trial
    fh, w = _writer(path)
    with fh:
        w.writerow(["t", "estimator", "node", "x", "d"])
        for t, dt in enumerate(first.signal):
            for e in first.estimators:
                for i, xi in enumerate(first.estimates[e][t]):
                    w.writerow([t, e, i + 1, _fmt(xi), _fmt(dt)])


def write_filter_trace(result: TrialResult, path) -> None:
    """Per-step, per-node record of the adaptive filter: estimate, multiplier, ``||k||^2`` and the row of K."""
    ft = result.filter_trace
    if ft is None:
        raise ValueError("trial was run without record_filter")
    x = result.estimates["Ep"]
    steps, n = x.shape
    fh, w = _writer(path)
    with fh:
        w.writerow(["t", "node", "x", "lambda", "k_norm2"] + [f"k_{j + 1}" for j in range(n)])
        for t in range(steps):
            for i in range(n):
                w.writerow([t, i + 1, _fmt(x[t, i]), _fmt(ft["lambda"][t, i]), _fmt(ft["k_norm2"][t, i])]
                           + [_fmt(v) for v in ft["K"][t, i]])
