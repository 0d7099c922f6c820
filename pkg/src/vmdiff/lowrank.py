"""Structured Hankel lifting of patches and low-rank completion by ADMM.

A ``P x P x C`` patch is lifted to the matrix whose rows are all ``k x k``
windows (origins in row-major order) and whose columns are the window
entries, channel-major then row-major within the window. For 64x64x3
patches and ``k = 8`` this is 3249 x 192.

The factor updates solve ``min |U|^2 + |V|^2  s.t.  U V^T = T`` with a
scaled multiplier ``L``::

    U   <- mu (T + L) V (I + mu V^T V)^-1
    V   <- mu (T + L)^T U (I + mu U^T U)^-1
    L   <- T - U V^T + L
    X_lr = U V^T - L

Every function accepts leading batch axes so a whole grid of patches can be
processed at once; each batch element keeps its own factors.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import cho_factor, cho_solve


@dataclass(frozen=True)
class HankelConfig:
    window: int = 8
    patch: int = 64
    channels: int = 3

    def __post_init__(self):
        if not 1 <= self.window <= self.patch:
            raise ValueError(f"window {self.window} outside [1, {self.patch}]")

    @property
    def positions(self) -> int:
        return self.patch - self.window + 1

    @property
    def rows(self) -> int:
        return self.positions**2

    @property
    def cols(self) -> int:
        return self.window**2 * self.channels

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols


def _cfg_for(patch_shape, cfg):
    if cfg is not None:
        return cfg
    return HankelConfig(patch=patch_shape[-2], channels=patch_shape[-1],
                        window=min(8, patch_shape[-2]))


def hankel(patch, cfg: HankelConfig | None = None) -> np.ndarray:
    """Lift ``(..., P, P, C)`` patches to ``(..., rows, cols)`` matrices."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim < 3 or patch.shape[-3] != patch.shape[-2]:
        raise ValueError(f"expected square (..., P, P, C) patches, got {patch.shape}")
    cfg = _cfg_for(patch.shape, cfg)
    if patch.shape[-3:] != (cfg.patch, cfg.patch, cfg.channels):
        raise ValueError(f"patch shape {patch.shape[-3:]} does not match {cfg}")
    k = cfg.window
    win = sliding_window_view(patch, (k, k), axis=(-3, -2))
    # win: (..., n, n, C, k, k)
    return win.reshape(patch.shape[:-3] + cfg.shape)


def hankel_adjoint(matrix, cfg: HankelConfig) -> np.ndarray:
    """Transpose of :func:`hankel`: scatter-add every entry to its pixel."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape[-2:] != cfg.shape:
        raise ValueError(f"matrix shape {matrix.shape[-2:]} does not match {cfg.shape}")
    lead = matrix.shape[:-2]
    n, k = cfg.positions, cfg.window
    blocks = matrix.reshape(lead + (n, n, cfg.channels, k, k))
    out = np.zeros(lead + (cfg.patch, cfg.patch, cfg.channels))
    for a in range(k):
        for b in range(k):
            out[..., a : a + n, b : b + n, :] += blocks[..., a, b]
    return out


def multiplicity(cfg: HankelConfig) -> np.ndarray:
    """Number of matrix entries that copy each pixel, shape ``(P, P, 1)``."""
    n, k = cfg.positions, cfg.window
    count = np.zeros((cfg.patch, cfg.patch, 1))
    for a in range(k):
        for b in range(k):
            count[a : a + n, b : b + n] += 1
    return count


def hankel_pinv(matrix, cfg: HankelConfig | None = None) -> np.ndarray:
    """Average all copies of each pixel; exact left inverse of :func:`hankel`."""
    cfg = cfg or HankelConfig()
    return hankel_adjoint(matrix, cfg) / multiplicity(cfg)


@dataclass(frozen=True)
class ADMMState:
    U: np.ndarray
    V: np.ndarray
    lam: np.ndarray
    mu: float
    rank: int

    @property
    def x_lr(self) -> np.ndarray:
        return self.U @ np.swapaxes(self.V, -1, -2) - self.lam

    def residual(self, target) -> np.ndarray:
        """Frobenius norm of ``target - U V^T`` per batch element."""
        r = np.asarray(target) - self.U @ np.swapaxes(self.V, -1, -2)
        return np.sqrt(np.sum(r * r, axis=(-2, -1)))


def _orthonormal_columns(block, seed):
    q, r = np.linalg.qr(block)
    d = np.abs(np.diagonal(r, axis1=-2, axis2=-1))
    scale = max(float(np.max(np.abs(block), initial=0.0)), 1.0)
    if np.all(d > 1e-10 * scale * block.shape[-2]):
        return q
    # rank-deficient leading columns: nudge with seeded noise, then redo
    rng = np.random.default_rng(seed)
    nudged = block + 1e-6 * scale * rng.standard_normal(block.shape)
    q, _ = np.linalg.qr(nudged)
    return q


def admm_init(matrix, rank: int, seed: int = 0, mu: float = 1.0) -> ADMMState:
    """Factor initialization without a singular-value decomposition.

    ``U`` spans the first ``rank`` columns of ``matrix`` (thin QR) and
    ``V = matrix^T U``, so ``U V^T`` is the projection of ``matrix`` onto that
    span. Column ``j`` of ``U`` and ``V`` is then rescaled by
    ``sqrt(|V_j|)`` and ``1 / sqrt(|V_j|)`` so both factors carry equal
    norms; this keeps the ridge terms of the first update from halving the
    fit. The multiplier starts at zero. ``seed`` is only used to perturb
    rank-deficient leading columns.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    n_cols = matrix.shape[-1]
    if not 1 <= rank <= n_cols:
        raise ValueError(f"rank {rank} outside [1, {n_cols}]")
    if mu <= 0:
        raise ValueError("mu must be positive")
    q = _orthonormal_columns(matrix[..., :rank], seed)
    v = np.swapaxes(matrix, -1, -2) @ q
    norms = np.sqrt(np.sum(v * v, axis=-2, keepdims=True))
    c = np.sqrt(np.where(norms > 0, norms, 1.0))
    return ADMMState(q * c, v / c, np.zeros_like(matrix), float(mu), int(rank))


def _right_solve(b, g):
    """Return ``b @ inv(g)`` for symmetric positive definite ``g`` (batched)."""
    if b.ndim == 2:
        return cho_solve(cho_factor(g), b.T).T
    out = np.empty_like(b)
    for idx in np.ndindex(b.shape[:-2]):
        out[idx] = cho_solve(cho_factor(g[idx]), b[idx].T).T
    return out


def admm_step(state: ADMMState, target) -> ADMMState:
    target = np.asarray(target, dtype=np.float64)
    if target.shape != state.lam.shape:
        raise ValueError(f"target shape {target.shape} does not match state {state.lam.shape}")
    mu, r = state.mu, state.rank
    eye = np.eye(r)
    t = target + state.lam
    tT = np.swapaxes(t, -1, -2)
    V = state.V
    U = _right_solve(mu * (t @ V), eye + mu * (np.swapaxes(V, -1, -2) @ V))
    V = _right_solve(mu * (tT @ U), eye + mu * (np.swapaxes(U, -1, -2) @ U))
    lam = target - U @ np.swapaxes(V, -1, -2) + state.lam
    return replace(state, U=U, V=V, lam=lam)


def lowrank_step(patch, state: ADMMState | None = None, *, rank: int = 48,
                 mu: float = 1.0, iters: int = 1, seed: int = 0,
                 cfg: HankelConfig | None = None) -> tuple[np.ndarray, ADMMState]:
    """Project patches toward a low-rank Hankel structure.

    Lifts ``patch``, initializes factors when ``state`` is None, runs
    ``iters`` updates and maps ``X_lr`` back through :func:`hankel_pinv`.
    Returns the new patch and the state to pass to the next call.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    patch = np.asarray(patch, dtype=np.float64)
    cfg = _cfg_for(patch.shape, cfg)
    target = hankel(patch, cfg)
    if state is None:
        state = admm_init(target, rank, seed=seed, mu=mu)
    for _ in range(iters):
        state = admm_step(state, target)
    return hankel_pinv(state.x_lr, cfg), state
