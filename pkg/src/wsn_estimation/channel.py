"""Independent Bernoulli packet losses on the links of a topology."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topology import Topology


@dataclass(frozen=True, eq=False)
class LossModel:
    """Per-link reception probabilities.

    ``p[i, j]`` is the probability that node ``i`` receives node ``j``'s
    packet in a step. The diagonal is always 1 and non-edges are 0.
    """

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("p must be square")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if not np.all(np.diag(p) == 1.0):
            raise ValueError("self-links must have p = 1")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def q(self) -> np.ndarray:
        return 1.0 - self.p

    def to_text(self) -> str:
        """Dense matrix block, one row per line, ``repr`` precision."""
        return "\n".join(" ".join(repr(float(v)) for v in row) for row in self.p) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LossModel":
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        return cls(np.array([[float(v) for v in row] for row in rows]))


@dataclass(frozen=True, eq=False)
class LossRealization:
    """Binary reception matrix for one step; row ``i`` is what node ``i`` hears."""

    phi: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=bool)
        if not phi.diagonal().all():
            raise ValueError("a node always receives its own data")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    def support(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.phi[i])


def loss_model(topo: Topology, q: float = 0.0, jitter: float = 0.0, seed=None) -> LossModel:
    """Loss model with per-link failure probability ``q +/- jitter``.

    Each directed link draws its own ``q_ij`` uniformly from
    ``[q - jitter, q + jitter]`` (clipped to [0, 1]) once, at construction.
    """
    if not 0.0 <= q <= 1.0 or jitter < 0:
        raise ValueError("need 0 <= q <= 1 and jitter >= 0")
    n = topo.n
    if jitter > 0:
        rng = np.random.default_rng(seed)
        qij = np.clip(rng.uniform(q - jitter, q + jitter, size=(n, n)), 0.0, 1.0)
    else:
        qij = np.full((n, n), float(q))
    p = np.where(topo.adjacency, 1.0 - qij, 0.0)
    np.fill_diagonal(p, 1.0)
    return LossModel(p)


def sample_realization(model: LossModel, rng: np.random.Generator,
                       symmetric: bool = False) -> LossRealization:
    """Draw one reception matrix.

    Off-diagonal entries are independent Bernoulli(p). ``symmetric`` copies
    the upper triangle onto the lower one (using ``p[i, j]`` for the pair),
    for sensitivity studies on correlated links.
    """
    draws = rng.random(model.p.shape)
    phi = draws < model.p
    if symmetric:
        upper = np.triu(phi, k=1)
        phi = upper | upper.T
    np.fill_diagonal(phi, True)
    return LossRealization(phi)


def realized_neighbor_count(r: LossRealization, i: int) -> int:
    return int(r.phi[i].sum())
