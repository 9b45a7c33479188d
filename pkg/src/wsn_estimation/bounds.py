"""Closed-form performance quantities: bias bound, variance bounds and the
generating-function expectation of the inverse realized neighbor count."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQRT5_M1 = math.sqrt(5.0) - 1.0
MAX_CHI_TERMS = 64


@dataclass(frozen=True)
class BoundInputs:
    n_total: int
    gamma_max: float
    sigma2: float
    p_vector: tuple = ()
    delta_cap: float = 0.0

    def __post_init__(self):
        if not 0 < self.gamma_max < 1:
            raise ValueError("gamma_max must lie in (0, 1)")
        if self.delta_cap < 0:
            raise ValueError("delta_cap must be >= 0")
        if any(not 0 <= p <= 1 for p in self.p_vector):
            raise ValueError("p entries must lie in [0, 1]")

    @property
    def neighborhood_size(self) -> int:
        return len(self.p_vector) + 1


def asymptotic_bias_bound(delta_cap: float, n_total: int, gamma_max: float) -> float:
    """Limit bound on the network mean-error norm for |d(t)-d(t-1)| < delta_cap."""
    return delta_cap * math.sqrt(n_total) * gamma_max / (1.0 - gamma_max)


def gamma_max_from_bias_power(upsilon: float, delta_cap: float) -> float:
    """Contraction bound giving per-node bias power ``upsilon`` (linear units)."""
    if upsilon < 0:
        raise ValueError("bias power must be >= 0")
    root = math.sqrt(upsilon)
    if root + delta_cap == 0:
        return 0.0
    return root / (root + delta_cap)


def chi_coefficients(p_vector) -> np.ndarray:
    """Coefficients of prod_j (q_j + p_j z), lowest degree first.

    ``chi[k]`` is the probability that exactly ``k`` of the other neighbors
    are received.
    """
    p = np.asarray(p_vector, dtype=float).ravel()
    if p.size > MAX_CHI_TERMS:
        raise ValueError(f"at most {MAX_CHI_TERMS} links supported, got {p.size}")
    coeffs = np.array([1.0])
    for pj in p:
        nxt = np.zeros(coeffs.size + 1)
        nxt[:-1] += (1.0 - pj) * coeffs
        nxt[1:] += pj * coeffs
        coeffs = nxt
    return coeffs


def expected_inverse_count(p_vector) -> float:
    """E[1 / |received neighborhood|] including the node itself."""
    chi = chi_coefficients(p_vector)
    return float((chi / np.arange(1, chi.size + 1)).sum())


def uniform_q_factor(q: float, neighborhood_size: int) -> float:
    """E[1 / count] with identical loss ``q`` on all ``m - 1`` links."""
    m = int(neighborhood_size)
    if m < 1:
        raise ValueError("neighborhood size must be >= 1")
    if q == 0.0:
        return 1.0 / m
    if q == 1.0:
        return 1.0
    return (1.0 - q ** m) / ((1.0 - q) * m)


def first_factor(n_total: int, gamma_max: float) -> float:
    """Variance reduction factor relative to the measurement average (< 1)."""
    a = SQRT5_M1 * math.sqrt(gamma_max)
    return (a + 2.0 * n_total) / (2.0 * a + 2.0 * n_total)


def variance_upper_bound(inputs: BoundInputs) -> float:
    return first_factor(inputs.n_total, inputs.gamma_max) * inputs.sigma2 * expected_inverse_count(inputs.p_vector)


def multiplier_sup_bound(n_total: int, gamma_max: float, sigma2: float) -> float:
    """Strict upper bound on the largest eigenvalue of the loaded masked covariance."""
    return sigma2 * (1.0 + 2.0 * n_total / (SQRT5_M1 * math.sqrt(gamma_max)))


def benchmark_variance(p_vector, sigma2: float) -> float:
    """Steady-state variance of the plain measurement average."""
    return sigma2 * expected_inverse_count(p_vector)


def theta_bound_line(position: str) -> int:
    """Quoted coupling-set size bound for a line graph node."""
    bounds = {"extreme": 2, "interior": 3}
    if position not in bounds:
        raise ValueError("position must be 'extreme' or 'interior'")
    return bounds[position]


def theta_bound_cayley(nu: int) -> int:
    """Quoted coupling-set size bound for a Cayley graph with ``nu`` generators besides 0."""
    return 2 * nu + 1


def cayley_first_factor(nu: int, gamma_max: float) -> float:
    """First factor with the network size replaced by the Cayley bound ``2 nu + 1``."""
    return first_factor(theta_bound_cayley(nu), gamma_max)


def bounds_table(inputs: BoundInputs) -> list[tuple[str, float]]:
    """Every closed-form quantity for one set of inputs, in display order."""
    rows = [
        ("asymptotic_bias_bound", asymptotic_bias_bound(inputs.delta_cap, inputs.n_total, inputs.gamma_max)),
        ("first_factor", first_factor(inputs.n_total, inputs.gamma_max)),
        ("expected_inverse_count", expected_inverse_count(inputs.p_vector)),
        ("benchmark_variance", benchmark_variance(inputs.p_vector, inputs.sigma2)),
        ("variance_upper_bound", variance_upper_bound(inputs)),
        ("multiplier_sup_bound", multiplier_sup_bound(inputs.n_total, inputs.gamma_max, inputs.sigma2)),
    ]
    p = np.asarray(inputs.p_vector, dtype=float)
    if p.size and np.allclose(p, p[0]):
        rows.append(("uniform_q_factor", uniform_q_factor(1.0 - float(p[0]), inputs.neighborhood_size)))
    return rows


def first_factor_grid(gammas, sizes):
    """Rows ``(gamma_max, N, factor)``."""
    return [(g, n, first_factor(n, g)) for n in sizes for g in gammas]


def uniform_q_grid(qs, sizes):
    """Rows ``(q, m, factor)``."""
    return [(q, m, uniform_q_factor(q, m)) for m in sizes for q in qs]
