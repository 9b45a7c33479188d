"""Adaptive minimum-variance weights for each node.

At every step node ``i`` forms

    x_i(t) = sum_j k_ij x_j(t-1) + sum_j h_ij u_j(t)

over the nodes it heard from, choosing ``(k_i, h_i)`` to minimize the
one-step error variance subject to ``sum(k_i + h_i) = 1`` and
``||k_i||^2 <= psi_i``. For a multiplier ``lam`` the optimum is

    A   = ((G + lam I) restricted to the support)^-1
    D'  = sigma2 * 1'A1 + |support|
    k   = sigma2 * A 1 / D'
    h   = 1 / D'                       (uniform on the support)

and ``lam`` is the smallest value in the known bracket that meets the norm
cap, found by bisection. ``G`` is the node's running estimate of the error
covariance of the estimates it receives.

Node ids are global (0..n-1); vectors and matrices are full-size with
zeros outside the node's neighborhood.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BisectionFailure, SingularBlock

DIAG_LOADING = 1e-12
MAX_COND = 1e12
BRACKET_DOUBLINGS = 40
MAX_BISECTIONS = 200
EIG_FLOOR = 1e-6


@dataclass
class FilterParams:
    sigma2: float
    psi_i: float
    bisection_tol: float = 1e-10
    forgetting: float = 0.96

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")
        if self.psi_i <= 0:
            raise ValueError("psi_i must be positive")
        if not 0 <= self.forgetting <= 1:
            raise ValueError("forgetting must lie in [0, 1]")


@dataclass
class NodeState:
    id: int
    x: float
    k: np.ndarray
    h: np.ndarray
    gamma_hat: np.ndarray
    active_set: np.ndarray
    lam: float = 0.0
    neighborhood: np.ndarray = field(default=None)


def _support_index(support) -> np.ndarray:
    s = np.asarray(support)
    if s.dtype == bool:
        s = np.flatnonzero(s)
    s = np.unique(s.astype(np.int64))
    if s.size == 0:
        raise ValueError("support must be non-empty")
    return s


def masked_pseudoinverse(m: np.ndarray, support) -> np.ndarray:
    """Inverse of the principal block of ``m`` on ``support``, zero elsewhere.

    Equals the Moore-Penrose pseudo-inverse of ``m`` with every row and
    column outside ``support`` zeroed, whenever that block is invertible.
    A ``1e-12`` diagonal loading is added to the block.
    """
    m = np.asarray(m, dtype=float)
    s = _support_index(support)
    block = m[np.ix_(s, s)] + DIAG_LOADING * np.eye(s.size)
    cond = np.linalg.cond(block)
    if not np.isfinite(cond) or cond > MAX_COND:
        raise SingularBlock(f"support block condition number {cond:.3e} exceeds {MAX_COND:.0e}")
    out = np.zeros_like(m)
    out[np.ix_(s, s)] = np.linalg.inv(block)
    return out


def weights_for_lambda(gamma_hat: np.ndarray, support, sigma2: float, lam: float):
    """Optimal ``(k, h)`` for a fixed multiplier, via the masked pseudo-inverse."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    g = np.asarray(gamma_hat, dtype=float)
    s = _support_index(support)
    w = np.zeros(g.shape[0])
    w[s] = 1.0
    a = masked_pseudoinverse(g + lam * np.eye(g.shape[0]), s)
    aw = a @ w
    denom = sigma2 * (w @ aw) + s.size
    return sigma2 * aw / denom, w / denom


# --- batched spectral solver -------------------------------------------------
#
# With G_S = Q diag(ev) Q' and c = Q' 1, the two scalars driving the weights
# are  s1 = sum c^2 / (ev + lam)  and  s2 = sum c^2 / (ev + lam)^2,  giving
# ||k||^2 = sigma2^2 s2 / (sigma2 s1 + m)^2. Blocks of different sizes are
# padded with an identity-like tail whose eigenvalue exceeds every real one,
# so the first m eigenvalues of each row are those of the real block and the
# padded directions carry zero weight.


@dataclass
class _Spectral:
    evals: np.ndarray  # (B, M)
    evecs: np.ndarray  # (B, M, M)
    c: np.ndarray  # (B, M)
    sizes: np.ndarray  # (B,)

    def ell_min(self):
        return self.evals[:, 0]

    def ell_max(self):
        return self.evals[np.arange(len(self.sizes)), self.sizes - 1]


def _spectral(blocks: np.ndarray, sizes: np.ndarray, floor: float | None = None) -> _Spectral:
    b, mmax, _ = blocks.shape
    pos = np.arange(mmax)
    real = pos[None, :] < sizes[:, None]
    blocks = np.where(real[:, :, None] & real[:, None, :], blocks, 0.0)
    pad = np.abs(blocks).sum(axis=2).max(axis=1) + 1.0
    idx = np.arange(mmax)
    blocks[:, idx, idx] = np.where(real, blocks[:, idx, idx], pad[:, None])
    evals, evecs = np.linalg.eigh(blocks)
    if floor is not None:
        # project onto the PSD cone; max() keeps the ascending order
        evals = np.where(real, np.maximum(evals, floor), evals)
    c = np.einsum("bji,bj->bi", evecs, real.astype(float))
    return _Spectral(evals, evecs, c, sizes)


def _ksq(sp: _Spectral, sigma2: float, lam: np.ndarray) -> np.ndarray:
    inv = 1.0 / (sp.evals + lam[:, None] + DIAG_LOADING)
    c2 = sp.c ** 2
    s1 = (c2 * inv).sum(axis=1)
    s2 = (c2 * inv ** 2).sum(axis=1)
    return sigma2 ** 2 * s2 / (sigma2 * s1 + sp.sizes) ** 2


def _solve_lambdas(sp: _Spectral, sigma2: float, psi: np.ndarray, tol: float) -> np.ndarray:
    b = len(psi)
    lam = np.zeros(b)
    need = _ksq(sp, sigma2, lam) > psi
    if not need.any():
        return lam
    rows = np.flatnonzero(need)
    sub = _Spectral(sp.evals[rows], sp.evecs[rows], sp.c[rows], sp.sizes[rows])
    p = psi[rows]
    base = sigma2 / np.sqrt(sub.sizes * p)
    hi = np.maximum(0.0, base - sub.ell_min())
    g_hi = _ksq(sub, sigma2, hi) - p
    doublings = 0
    while (g_hi > 0).any():
        if doublings == BRACKET_DOUBLINGS:
            bad = rows[np.flatnonzero(g_hi > 0)[0]]
            raise BisectionFailure(
                f"no sign change for lambda after {BRACKET_DOUBLINGS} bracket doublings",
                node=int(bad), residual=float(g_hi.max()))
        grow = g_hi > 0
        hi = np.where(grow, np.maximum(hi, base) * 2.0, hi)
        g_hi = _ksq(sub, sigma2, hi) - p
        doublings += 1

    lo = np.zeros_like(hi)
    found = np.full(len(rows), np.nan)
    for _ in range(MAX_BISECTIONS):
        open_ = np.isnan(found)
        if not open_.any():
            break
        mid = 0.5 * (lo + hi)
        g = _ksq(sub, sigma2, mid) - p
        # accept only from the feasible side so ||k||^2 <= psi holds exactly
        hit = open_ & (g <= 0) & (g > -tol)
        found[hit] = mid[hit]
        lo = np.where(g > 0, mid, lo)
        hi = np.where(g > 0, hi, mid)
        collapsed = open_ & ~hit & (hi - lo <= 4 * np.finfo(float).eps * np.maximum(hi, 1.0))
        found[collapsed] = hi[collapsed]
    found = np.where(np.isnan(found), hi, found)
    lam[rows] = found
    return lam


def _weights_from_spectral(sp: _Spectral, sigma2: float, lam: np.ndarray):
    inv = 1.0 / (sp.evals + lam[:, None] + DIAG_LOADING)
    aw = np.einsum("bij,bj->bi", sp.evecs, inv * sp.c)
    s1 = (sp.c ** 2 * inv).sum(axis=1)
    denom = sigma2 * s1 + sp.sizes
    real = np.arange(sp.evals.shape[1])[None, :] < sp.sizes[:, None]
    k = np.where(real, sigma2 * aw / denom[:, None], 0.0)
    h = np.where(real, 1.0 / denom[:, None], 0.0)
    return k, h


def _check_conditioning(sp: _Spectral, lam: np.ndarray, nodes=None):
    cond = (sp.ell_max() + lam + DIAG_LOADING) / (sp.ell_min() + lam + DIAG_LOADING)
    bad = ~np.isfinite(cond) | (cond > MAX_COND) | (sp.ell_min() + lam + DIAG_LOADING <= 0)
    if bad.any():
        r = int(np.flatnonzero(bad)[0])
        node = None if nodes is None else int(nodes[r])
        raise SingularBlock(f"support block condition number {cond[r]:.3e} exceeds {MAX_COND:.0e}", node=node)


def solve_lambda(gamma_hat: np.ndarray, support, sigma2: float, psi_i: float, tol: float = 1e-10) -> float:
    """Multiplier making ``||k||^2 = psi_i``, or 0 if the cap is inactive.

    The search starts on ``[0, max(0, sigma2 / sqrt(m psi_i) - ell_min)]``
    where ``ell_min`` is the smallest eigenvalue of the support block; the
    upper end is doubled (up to 40 times) if it does not bracket the root.

    Raises:
        BisectionFailure: no bracket found.
    """
    if psi_i <= 0:
        raise ValueError("psi_i must be positive")
    g = np.asarray(gamma_hat, dtype=float)
    s = _support_index(support)
    sp = _spectral(g[np.ix_(s, s)][None].copy(), np.array([s.size]))
    return float(_solve_lambdas(sp, sigma2, np.array([float(psi_i)]), tol)[0])


def optimal_weights(gamma_hat: np.ndarray, support, params: FilterParams):
    """``(k, h, lam)`` for one node: multiplier by bisection, then the weights."""
    lam = solve_lambda(gamma_hat, support, params.sigma2, params.psi_i, params.bisection_tol)
    k, h = weights_for_lambda(gamma_hat, support, params.sigma2, lam)
    return k, h, lam


def update_estimate(state: NodeState | None, prev_estimates, measurements, k, h) -> float:
    """Weighted combination of received estimates and measurements."""
    k = np.asarray(k, dtype=float)
    h = np.asarray(h, dtype=float)
    if state is not None:
        outside = np.ones(k.size, dtype=bool)
        outside[state.active_set] = False
        if np.any(k[outside] != 0) or np.any(h[outside] != 0):
            raise ValueError("weights must vanish outside the active set")
    return float(k @ np.asarray(prev_estimates, float) + h @ np.asarray(measurements, float))


def initial_variance(sigma2: float, realized_count: int) -> float:
    """Variance of a measurement minus the average of the other received ones."""
    if realized_count > 1:
        return sigma2 * (1.0 + 1.0 / (realized_count - 1))
    return sigma2


def init_state(own_measurement: float, node: int = 0, n: int = 1, neighborhood=None,
               realized=None, sigma2: float = 1.0) -> NodeState:
    """State at t = 0: estimate = own measurement, diagonal covariance guess.

    ``neighborhood`` is the closed neighborhood (defaults to ``[node]``) and
    ``realized`` the nodes heard at t = 0 (defaults to the neighborhood).
    """
    nbr = np.array([node] if neighborhood is None else neighborhood, dtype=np.int64)
    act = nbr if realized is None else _support_index(realized)
    g = np.zeros((n, n))
    g[nbr, nbr] = initial_variance(sigma2, act.size)
    return NodeState(id=node, x=float(own_measurement), k=np.zeros(n), h=np.zeros(n),
                     gamma_hat=g, active_set=act, lam=0.0, neighborhood=nbr)


def covariance_update(state: NodeState, residuals, forgetting: float, noise_var: float = 0.0) -> np.ndarray:
    """Exponentially-forgotten outer product of residuals on the active block.

    ``noise_var`` is subtracted from every entry of the new outer product;
    pass the variance of the reference the residuals were taken against to
    remove its common contribution.
    """
    r = np.asarray(residuals, dtype=float)
    s = state.active_set
    g = state.gamma_hat.copy()
    rs = r[s]
    sample = np.outer(rs, rs) - noise_var
    g[np.ix_(s, s)] = forgetting * g[np.ix_(s, s)] + (1.0 - forgetting) * sample
    return g


def covariance_reinit(state: NodeState, rejoined: int) -> np.ndarray:
    """Reset a neighbor that reappears after an outage.

    Its variance becomes the largest variance currently on the diagonal and
    its covariances with everyone else become 0.
    """
    g = state.gamma_hat.copy()
    top = g.diagonal().max()
    g[rejoined, :] = 0.0
    g[:, rejoined] = 0.0
    g[rejoined, rejoined] = top
    return g


# --- whole-network estimator --------------------------------------------------


class ProposedEstimator:
    """All nodes of the adaptive estimator, stepped synchronously.

    Covariance estimates live in a ``(n, n, n)`` array: slice ``i`` is node
    ``i``'s matrix over its own neighborhood.

    The per-step covariance residual of neighbor ``j`` at node ``i`` is the
    received estimate ``x_j(t-1)`` minus the mean of the measurements node
    ``i`` received at ``t``. That mean carries noise of variance
    ``sigma2 / m`` shared by every residual, so with ``noise_correction``
    (the default) ``sigma2 / m`` is subtracted from each new outer product
    and the eigenvalues of each support block are floored at
    ``EIG_FLOOR * sigma2`` before solving.
    """

    def __init__(self, adjacency: np.ndarray, psi: np.ndarray, sigma2: float,
                 forgetting: float = 0.96, bisection_tol: float = 1e-10, noise_correction: bool = True):
        self.adjacency = np.asarray(adjacency, dtype=bool)
        self.n = self.adjacency.shape[0]
        self.psi = np.asarray(psi, dtype=float)
        self.sigma2 = float(sigma2)
        self.forgetting = float(forgetting)
        self.bisection_tol = float(bisection_tol)
        self.noise_correction = bool(noise_correction)
        self.gamma_hat = np.zeros((self.n, self.n, self.n))
        self.prev_active = np.eye(self.n, dtype=bool)
        self.K = np.zeros((self.n, self.n))
        self.H = np.zeros((self.n, self.n))
        self.lam = np.zeros(self.n)
        # largest eigenvalue of each loaded support block at the last step
        self.ell_max = np.zeros(self.n)

    def start(self, u0: np.ndarray, phi0: np.ndarray) -> np.ndarray:
        phi0 = np.asarray(phi0, bool) & self.adjacency
        counts = phi0.sum(axis=1)
        self.gamma_hat[:] = 0.0
        for i in range(self.n):
            nbr = np.flatnonzero(self.adjacency[i])
            self.gamma_hat[i, nbr, nbr] = initial_variance(self.sigma2, int(counts[i]))
        self.prev_active = phi0.copy()
        self.K[:] = 0.0
        self.H[:] = 0.0
        np.fill_diagonal(self.H, 1.0)
        return np.asarray(u0, dtype=float).copy()

    def _reinit(self, phi: np.ndarray) -> None:
        rejoin = phi & ~self.prev_active
        if not rejoin.any():
            return
        g = self.gamma_hat
        idx = np.arange(self.n)
        top = g[:, idx, idx].max(axis=1)
        keep = ~rejoin
        g *= keep[:, :, None]
        g *= keep[:, None, :]
        ii, jj = np.nonzero(rejoin)
        g[ii, jj, jj] = top[ii]

    def _update_covariance(self, x_prev: np.ndarray, u: np.ndarray, phi: np.ndarray) -> None:
        counts = phi.sum(axis=1)
        ubar = (phi * u[None, :]).sum(axis=1) / counts
        r = np.where(phi, x_prev[None, :] - ubar[:, None], 0.0)
        sample = r[:, :, None] * r[:, None, :]
        if self.noise_correction:
            sample -= (self.sigma2 / counts)[:, None, None]
        block = phi[:, :, None] & phi[:, None, :]
        f = self.forgetting
        self.gamma_hat = np.where(block, f * self.gamma_hat + (1.0 - f) * sample, self.gamma_hat)

    def _solve(self, phi: np.ndarray) -> None:
        counts = phi.sum(axis=1)
        mmax = int(counts.max())
        order = np.argsort(~phi, axis=1, kind="stable")[:, :mmax]
        rows = np.arange(self.n)[:, None]
        blocks = self.gamma_hat[rows[:, :, None], order[:, :, None], order[:, None, :]].copy()
        sp = _spectral(blocks, counts, EIG_FLOOR * self.sigma2 if self.noise_correction else None)
        lam = _solve_lambdas(sp, self.sigma2, self.psi, self.bisection_tol)
        _check_conditioning(sp, lam, nodes=np.arange(self.n))
        k, h = _weights_from_spectral(sp, self.sigma2, lam)
        self.K[:] = 0.0
        self.H[:] = 0.0
        real = np.arange(mmax)[None, :] < counts[:, None]
        ri, ci = np.nonzero(real)
        self.K[ri, order[ri, ci]] = k[ri, ci]
        self.H[ri, order[ri, ci]] = h[ri, ci]
        self.lam = lam
        self.ell_max = sp.ell_max() + lam

    def step(self, x_prev: np.ndarray, u: np.ndarray, phi: np.ndarray) -> np.ndarray:
        phi = np.asarray(phi, bool) & self.adjacency
        self._reinit(phi)
        self._update_covariance(x_prev, u, phi)
        self._solve(phi)
        self.prev_active = phi.copy()
        return self.K @ x_prev + self.H @ u

    def node_state(self, i: int, x: float = np.nan) -> NodeState:
        return NodeState(id=i, x=float(x), k=self.K[i].copy(), h=self.H[i].copy(),
                         gamma_hat=self.gamma_hat[i].copy(), active_set=np.flatnonzero(self.prev_active[i]),
                         lam=float(self.lam[i]), neighborhood=np.flatnonzero(self.adjacency[i]))
