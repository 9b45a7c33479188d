"""Heuristic comparison estimators E1-E4.

Each per-node function returns full-length ``(k, h)`` rows; the
``*_matrices`` helpers build the whole ``(K, H)`` pair for one realization,
which is what the simulator uses.
"""

from __future__ import annotations

from enum import Enum

import numpy as np


class BaselineKind(str, Enum):
    E1 = "E1"
    E2 = "E2"
    E3 = "E3"
    E4 = "E4"


def _phi(realization, topo=None) -> np.ndarray:
    phi = np.asarray(getattr(realization, "phi", realization), dtype=bool)
    if topo is not None:
        phi = phi & topo.adjacency
    return phi


def laplacian_weights(realization, topo=None):
    """E1: ``K = H = (I - L) / 2`` with the received-link Laplacian.

    ``L`` is built row by row from what each node received: ``L_ii`` is the
    number of other nodes heard, ``L_ij = -1`` for each of them. No
    rescaling is applied, so the estimator is unstable on dense graphs.
    """
    phi = _phi(realization, topo).copy()
    np.fill_diagonal(phi, False)
    lap = np.diag(phi.sum(axis=1).astype(float)) - phi.astype(float)
    k = (np.eye(phi.shape[0]) - lap) / 2.0
    return k, k.copy()


def average_weights(realization, i: int, topo=None):
    """E2: ignore old estimates, average the received measurements."""
    row = _phi(realization, topo)[i]
    k = np.zeros(row.size)
    h = row / row.sum()
    return k, h


def old_estimates_plus_own(realization, i: int, topo=None):
    """E3: average of received estimates, own one shared with own measurement."""
    row = _phi(realization, topo)[i].astype(float)
    m = row.sum()
    k = row / m
    k[i] = 1.0 / (2.0 * m)
    h = np.zeros(row.size)
    h[i] = 1.0 / (2.0 * m)
    return k, h


def half_half_weights(realization, i: int, topo=None):
    """E4: half weight on received estimates, half on received measurements."""
    row = _phi(realization, topo)[i].astype(float)
    w = row / (2.0 * row.sum())
    return w, w.copy()


def average_matrices(phi: np.ndarray):
    phi = np.asarray(phi, bool)
    h = phi / phi.sum(axis=1, keepdims=True)
    return np.zeros(phi.shape), h


def old_plus_own_matrices(phi: np.ndarray):
    phi = np.asarray(phi, bool)
    m = phi.sum(axis=1, keepdims=True).astype(float)
    k = phi / m
    idx = np.arange(phi.shape[0])
    k[idx, idx] = 1.0 / (2.0 * m[:, 0])
    h = np.zeros(phi.shape)
    h[idx, idx] = 1.0 / (2.0 * m[:, 0])
    return k, h


def half_half_matrices(phi: np.ndarray):
    phi = np.asarray(phi, bool)
    w = phi / (2.0 * phi.sum(axis=1, keepdims=True))
    return w, w.copy()


def baseline_matrices(kind, phi: np.ndarray):
    kind = BaselineKind(kind)
    if kind is BaselineKind.E1:
        return laplacian_weights(phi)
    if kind is BaselineKind.E2:
        return average_matrices(phi)
    if kind is BaselineKind.E3:
        return old_plus_own_matrices(phi)
    return half_half_matrices(phi)
