"""Per-node thresholds psi bounding the squared norm of each estimate-weight row.

The thresholds are the largest vector satisfying

    S_i(psi) = psi_i + sqrt(psi_i) * sum_{j in theta_i} sqrt(psi_j) - gamma_max <= 0

for every node. The optimum makes every constraint active, so it is found
as the fixed point of a component-wise contraction started from the
closed-form feasible point ``feasible_lower_bound``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NonConvergence

SWEEPS = ("gauss-seidel", "jacobi")
GUARDS = ("step", "freeze")


@dataclass(frozen=True)
class ThresholdVector:
    psi: np.ndarray
    gamma_max: float
    iterations: int = 0

    def __len__(self):
        return len(self.psi)


def _sizes(theta: Sequence[Sequence[int]]) -> np.ndarray:
    return np.array([len(t) for t in theta], dtype=float)


def feasible_lower_bound(theta_sizes, gamma_max: float) -> ThresholdVector:
    """Closed-form feasible point: each constraint solved with neighbors at gamma_max."""
    if not 0 < gamma_max < 1:
        raise ValueError("gamma_max must lie in (0, 1)")
    m = np.asarray(theta_sizes, dtype=float)
    psi = gamma_max / 4.0 * (np.sqrt(m ** 2 + 4.0) - m) ** 2
    return ThresholdVector(psi, gamma_max)


def _as_psi(psi) -> np.ndarray:
    return np.asarray(psi.psi if isinstance(psi, ThresholdVector) else psi, dtype=float)


def constraint_residuals(psi, theta, gamma_max: float | None = None) -> np.ndarray:
    """``S_i(psi)`` for every node; all <= 0 iff feasible."""
    if gamma_max is None:
        gamma_max = psi.gamma_max
    v = _as_psi(psi)
    root = np.sqrt(v)
    coupled = np.array([root[list(t)].sum() for t in theta])
    return v + root * coupled - gamma_max


def rho_star(psi, i: int, theta_i) -> float:
    """Fastest contracting step for component ``i``, or 0 when no step contracts."""
    v = _as_psi(psi)
    ri = math.sqrt(v[i])
    rj = np.sqrt(v[list(theta_i)])
    diag = 1.0 + rj.sum() / (2.0 * ri)
    off = (ri / (2.0 * rj)).sum()
    if diag >= off:
        return 2.0 * ri / (2.0 * ri + rj.sum())
    return 0.0


def contraction_factor(psi, i: int, theta_i, rho: float) -> float:
    """Max-norm contraction modulus of the component map for a given step."""
    v = _as_psi(psi)
    ri = math.sqrt(v[i])
    rj = np.sqrt(v[list(theta_i)])
    diag = 1.0 + rj.sum() / (2.0 * ri)
    return abs(1.0 - rho * diag) + rho * (ri / (2.0 * rj)).sum()


def constraint_jacobian(psi, theta) -> np.ndarray:
    """``J[r, c] = dS_r / dpsi_c``.

    Diagonal ``1 + sum_j sqrt(psi_j) / (2 sqrt(psi_i))``; entry ``(i, j)``
    for ``j`` in ``theta_i`` is ``sqrt(psi_i) / (2 sqrt(psi_j))``.
    """
    v = _as_psi(psi)
    root = np.sqrt(v)
    n = len(v)
    jac = np.zeros((n, n))
    for i, t in enumerate(theta):
        t = list(t)
        jac[i, i] = 1.0 + root[t].sum() / (2.0 * root[i])
        jac[i, t] += root[i] / (2.0 * root[t])
    return jac


def fixed_point_solve(theta, gamma_max: float, tol: float = 1e-10, max_iter: int = 10_000,
                      sweep: str = "gauss-seidel", guard: str = "step",
                      check_contraction: bool = True) -> ThresholdVector:
    """Iterate ``psi_i <- psi_i - rho_i * S_i(psi)`` until ``max |S| < tol``.

    Args:
        theta: coupling set per node (node ids, owner excluded).
        gamma_max: right-hand side of every constraint, in (0, 1).
        sweep: ``"gauss-seidel"`` updates components in place in node
            order (each node sees the latest values of the others);
            ``"jacobi"`` updates all components from the same snapshot.
        guard: with ``"step"`` every node takes the diagonal-Newton step
            ``2 sqrt(psi_i) / (2 sqrt(psi_i) + sum_j sqrt(psi_j))``; the
            optimality guard only decides whether the contraction
            certificate is checked. ``"freeze"`` sets the step to 0 when the
            guard fails and falls back to ``1 / (2 + |theta_i|)`` once every
            unconverged node is frozen. Freezing tends to stall on
            irregular graphs.
        check_contraction: assert the max-norm modulus is < 1 for every
            guarded step.

    Returns:
        ThresholdVector with the number of sweeps performed.

    Raises:
        NonConvergence: ``max_iter`` sweeps without reaching ``tol``.
    """
    if sweep not in SWEEPS:
        raise ValueError(f"sweep must be one of {SWEEPS}")
    if guard not in GUARDS:
        raise ValueError(f"guard must be one of {GUARDS}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    theta = [np.asarray(list(t), dtype=np.int64) for t in theta]
    psi = feasible_lower_bound(_sizes(theta), gamma_max).psi.copy()
    n = len(psi)
    fallback = 1.0 / (2.0 + _sizes(theta))
    residual = np.inf

    for it in range(max_iter + 1):
        res = constraint_residuals(psi, theta, gamma_max)
        residual = float(np.abs(res).max())
        if residual < tol:
            return ThresholdVector(psi, gamma_max, iterations=it)
        if it == max_iter:
            break
        src = psi if sweep == "gauss-seidel" else psi.copy()
        steps = np.zeros(n)
        f_now = np.zeros(n)
        for i in range(n):
            t = theta[i]
            ri = math.sqrt(src[i])
            rj = np.sqrt(src[t])
            sj = rj.sum()
            diag = 1.0 + sj / (2.0 * ri)
            off = (ri / (2.0 * rj)).sum()
            guarded = diag >= off
            if guarded:
                rho = 1.0 / diag
                if check_contraction:
                    alpha = abs(1.0 - rho * diag) + rho * off
                    assert alpha < 1.0 or math.isclose(alpha, 1.0), f"node {i}: contraction modulus {alpha}"
            elif guard == "freeze":
                rho = 0.0
            else:
                rho = 1.0 / diag
            f_i = src[i] + ri * sj - gamma_max
            steps[i] = rho
            f_now[i] = f_i
            if sweep == "gauss-seidel":
                psi[i] = src[i] - rho * f_i
        if sweep == "jacobi":
            psi = src - steps * f_now
        if guard == "freeze":
            stuck = (steps == 0.0) & (np.abs(f_now) >= tol)
            active = (steps > 0.0) & (np.abs(f_now) >= tol)
            if stuck.any() and not active.any():
                # every unconverged node froze: take the conservative step
                psi = psi - np.where(stuck, fallback * f_now, 0.0)
    raise NonConvergence(
        f"threshold iteration did not converge in {max_iter} sweeps, last max |S| = {residual:.3e}",
        residual=residual,
    )


def write_psi_csv(psi: ThresholdVector, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "psi"])
        for i, v in enumerate(psi.psi):
            w.writerow([i + 1, repr(float(v))])


def read_psi_csv(path, gamma_max: float) -> ThresholdVector:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    psi = np.array([float(r["psi"]) for r in sorted(rows, key=lambda r: int(r["node"]))])
    return ThresholdVector(psi, gamma_max)
