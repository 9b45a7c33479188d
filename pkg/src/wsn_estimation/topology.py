"""Static communication graphs and the neighborhood sets derived from them.

Nodes are 0-based everywhere in the API. Text serialization (edge lists)
is 1-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

THETA_MODES = ("two_hop", "neighborhood")


@dataclass(frozen=True, eq=False)
class Topology:
    """Undirected graph with self-loops on every node.

    Attributes:
        adjacency: symmetric boolean ``(n, n)`` array, true diagonal.
        positions: ``(n, 2)`` coordinates for geometric graphs, else None.
    """

    adjacency: np.ndarray
    positions: np.ndarray | None = None
    name: str = field(default="custom")

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise ValueError("adjacency must be a non-empty square matrix")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        np.fill_diagonal(adj, True)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        if self.positions is not None:
            pos = np.array(self.positions, dtype=float)
            pos.setflags(write=False)
            object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def neighborhood(self, i: int) -> np.ndarray:
        """Closed neighborhood of ``i`` (includes ``i``), sorted."""
        return np.flatnonzero(self.adjacency[i])

    def neighborhood_sizes(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def degree(self, i: int) -> int:
        return int(self.adjacency[i].sum()) - 1

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges ``(i, j)`` with ``i < j``."""
        iu, ju = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(iu.tolist(), ju.tolist()))

    def is_connected(self) -> bool:
        seen = np.zeros(self.n, dtype=bool)
        seen[0] = True
        frontier = seen.copy()
        while frontier.any():
            reach = self.adjacency[frontier].any(axis=0) & ~seen
            seen |= reach
            frontier = reach
        return bool(seen.all())

    def stats(self) -> dict:
        sizes = self.neighborhood_sizes()
        return {
            "n": self.n,
            "edges": len(self.edges()),
            "mean_neighborhood": float(sizes.mean()),
            "min_neighborhood": int(sizes.min()),
            "max_neighborhood": int(sizes.max()),
            "connected": self.is_connected(),
        }

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        if not np.array_equal(self.adjacency, other.adjacency):
            return False
        if (self.positions is None) != (other.positions is None):
            return False
        return self.positions is None or np.array_equal(self.positions, other.positions)

    __hash__ = None


def _adjacency_from_positions(positions: np.ndarray, radius: float) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    adj = dist < radius
    np.fill_diagonal(adj, True)
    return adj


def default_radius(n: int) -> float:
    """Connection radius reproducing the reference density on side ``n/2``.

    Equivalent to radius ``1.7*sqrt(n)`` on a square of side ``n``; with
    ``n=20`` this gives a mean closed neighborhood near 6.6-6.9 with
    extremes around 3 and 11.
    """
    return 0.85 * math.sqrt(n)


def build_geometric(n: int, side: float | None = None, radius: float | None = None,
                    seed=None, positions=None) -> Topology:
    """Random geometric graph: ``n`` uniform points in ``[0, side]^2``.

    Two distinct nodes are adjacent when their distance is strictly below
    ``radius``. Connectivity is not enforced. ``positions`` may be given
    to bypass sampling (used by tests).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    side = n / 2 if side is None else side
    radius = default_radius(n) if radius is None else radius
    if side <= 0 or radius <= 0:
        raise ValueError("side and radius must be positive")
    if positions is None:
        rng = np.random.default_rng(seed)
        positions = rng.uniform(0.0, side, size=(n, 2))
    else:
        positions = np.asarray(positions, dtype=float)
        if positions.shape != (n, 2):
            raise ValueError(f"positions must have shape ({n}, 2)")
    return Topology(_adjacency_from_positions(positions, radius), positions, name="geometric")


def build_line(n: int) -> Topology:
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = np.arange(n)
    return Topology(np.abs(idx[:, None] - idx[None, :]) <= 1, name="line")


def expand_generators(gens: Iterable[int], n: int) -> set[int]:
    """Close a generator list under negation mod ``n`` and add 0."""
    out = {0}
    for g in gens:
        out.add(g % n)
        out.add(-g % n)
    return out


def build_cayley(n: int, generators: Iterable[int]) -> Topology:
    """Cayley graph on Z_n: ``i ~ j`` iff ``(i - j) mod n`` is a generator.

    ``generators`` must contain 0 and be closed under negation mod ``n``;
    use :func:`expand_generators` to build such a set from ``{1, 3, 4}``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gens = {g % n for g in generators}
    if 0 not in gens:
        raise ValueError("generator set must contain 0")
    missing = sorted(g for g in gens if (-g) % n not in gens)
    if missing:
        raise ValueError(f"generator set not closed under inverse: missing negatives of {missing}")
    idx = np.arange(n)
    diff = (idx[:, None] - idx[None, :]) % n
    return Topology(np.isin(diff, sorted(gens)), name="cayley")


def from_edges(n: int, edges: Iterable[tuple[int, int]]) -> Topology:
    adj = np.eye(n, dtype=bool)
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"edge ({i + 1}, {j + 1}) outside 1..{n}")
        adj[i, j] = adj[j, i] = True
    return Topology(adj)


def two_hop_set(topo: Topology, i: int, realization=None, mode: str = "two_hop") -> np.ndarray:
    """Coupling set of node ``i`` used by the threshold constraints.

    ``two_hop``: every ``j != i`` whose closed neighborhood meets that of
    ``i`` (this already covers the neighbors of ``i``). ``neighborhood``:
    the closed neighborhood of ``i`` itself, owner included.

    With a realization, neighborhoods are restricted to received links
    (row ``j`` of ``phi`` is what node ``j`` hears).
    """
    return theta_sets(topo, realization, mode)[i]


def theta_sets(topo: Topology, realization=None, mode: str = "two_hop") -> list[np.ndarray]:
    """:func:`two_hop_set` for every node at once."""
    if mode not in THETA_MODES:
        raise ValueError(f"theta mode must be one of {THETA_MODES}, got {mode!r}")
    nbr = topo.adjacency if realization is None else (np.asarray(realization.phi, bool) & topo.adjacency)
    if mode == "neighborhood":
        return [np.flatnonzero(nbr[i]) for i in range(topo.n)]
    a = nbr.astype(np.int64)
    overlap = (a @ a.T) > 0
    np.fill_diagonal(overlap, False)
    return [np.flatnonzero(overlap[i]) for i in range(topo.n)]


def write_edge_list(topo: Topology, path) -> None:
    lines = [str(topo.n)] + [f"{i + 1} {j + 1}" for i, j in topo.edges()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path) -> Topology:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 1:
        raise ValueError("edge list must start with the node count")
    n = int(rows[0][0])
    edges = []
    for row in rows[1:]:
        if len(row) != 2:
            raise ValueError(f"bad edge line: {' '.join(row)!r}")
        edges.append((int(row[0]) - 1, int(row[1]) - 1))
    return from_edges(n, edges)
