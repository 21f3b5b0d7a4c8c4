"""Backpropagation through time for the LP-GRNN on many-to-one windows."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import DivergedLoss
from .lpgrnn import BIASES, LpGrnnCell, lpgrnn_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.1
    epochs: int = 100
    batch: int = 64
    patience: int = 10
    decay: float = 0.5
    clip: float = 10.0
    seed: int = 0


def _arrays(data):
    if hasattr(data, "X"):
        X, Y = data.X, data.Y
    else:
        X, Y = data
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    return X, Y


def forward_windows(c: LpGrnnCell, X):
    """Run windows ``X`` of shape (B, T, n_x) from zero state; keep the tape for BPTT."""
    B, T, _ = X.shape
    H = np.zeros((B, c.n_h))
    tape = []
    for t in range(T):
        h_next, r, ht = lpgrnn_step(c, H, X[:, t])
        tape.append((H, r, ht))
        H = h_next
    y = H @ c.W_out.T + c.b_out
    return y, H, tape


def rmse(c: LpGrnnCell, data) -> float:
    X, Y = _arrays(data)
    y, _, _ = forward_windows(c, X)
    return float(np.sqrt(np.mean((y - Y) ** 2)))


def loss_and_grad(c: LpGrnnCell, X, Y):
    """RMSE loss on the last-step output and its gradient for every tensor of the cell."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    y, H_T, tape = forward_windows(c, X)
    err = y - Y
    loss = float(np.sqrt(np.mean(err ** 2)))
    g = {k: np.zeros_like(v) for k, v in c.params().items()}
    if loss == 0.0:
        return loss, g
    dy = err / (err.size * loss)
    g["W_out"] = dy.T @ H_T
    g["b_out"] = dy.sum(axis=0)
    s = c.mix
    dH = dy @ c.W_out
    ds = np.zeros(c.n_h)
    db_h = np.zeros(c.n_h)
    db_r = np.zeros(c.n_h)
    for t in range(len(tape) - 1, -1, -1):
        H, r, ht = tape[t]
        xt = X[:, t]
        ds += np.sum(dH * (H - ht), axis=0)
        da_h = dH * (1.0 - s) * (1.0 - ht ** 2)
        g["W_hx"] += da_h.T @ xt
        g["G"] += da_h.T @ r
        g["W_hh"] += da_h.T @ H
        db_h += da_h.sum(axis=0)
        da_r = (da_h @ c.G) * r * (1.0 - r)
        g["W_rx"] += da_r.T @ xt
        g["W_rh"] += da_r.T @ H
        db_r += da_r.sum(axis=0)
        dH = dH * s + da_h @ c.W_hh + da_r @ c.W_rh
    g["alpha"] = ds * s * (1.0 - s)
    for b in ("b_hx", "b_hr", "b_hh"):
        g[b] = db_h.copy()
    for b in ("b_rx", "b_rh"):
        g[b] = db_r.copy()
    return loss, g


def _clip(g: dict, limit: float) -> dict:
    norm = np.sqrt(sum(float(np.sum(v ** 2)) for v in g.values()))
    if norm > limit:
        return {k: v * (limit / norm) for k, v in g.items()}
    return g


def train_bptt(c: LpGrnnCell, data, config: TrainConfig | None = None, **overrides):
    """Mini-batch gradient descent; returns ``(best cell, per-epoch RMSE trace)``.

    The trace holds the full-data RMSE after each epoch. The learning rate is
    halved after ``patience`` epochs without a new best.
    """
    cfg = config or TrainConfig()
    if overrides:
        cfg = TrainConfig(**{**cfg.__dict__, **overrides})
    X, Y = _arrays(data)
    if cfg.epochs <= 0:
        return c, []
    rng = np.random.default_rng(cfg.seed)
    params = {k: v.copy() for k, v in c.params().items()}
    best_cell, best = c, rmse(c, (X, Y))
    lr, stale, trace = cfg.lr, 0, []
    n = len(X)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch):
            idx = order[start:start + cfg.batch]
            loss, g = loss_and_grad(LpGrnnCell(**params), X[idx], Y[idx])
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss became {loss} in epoch {epoch}")
            g = _clip(g, cfg.clip)
            for k in params:
                params[k] = params[k] - lr * g[k]
        cell = LpGrnnCell(**params) if all(np.all(np.isfinite(v)) for v in params.values()) else None
        epoch_loss = rmse(cell, (X, Y)) if cell is not None else np.nan
        if not np.isfinite(epoch_loss):
            raise DivergedLoss(f"loss became {epoch_loss} after epoch {epoch}")
        trace.append(epoch_loss)
        if epoch_loss < best:
            best, best_cell, stale = epoch_loss, cell, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                lr *= cfg.decay
                stale = 0
                log.info("epoch %d: lr decayed to %g", epoch, lr)
    return best_cell, trace


def sensitivity_curve(c: LpGrnnCell, lag_max: int, samples: int = 32, seed: int = 0) -> np.ndarray:
    """Mean Frobenius norm of d h_T / d x_{T - tau} for tau = 0..lag_max, random inputs."""
    rng = np.random.default_rng(seed)
    T = lag_max + 1
    X = rng.uniform(-1.0, 1.0, size=(samples, T, c.n_x))
    _, _, tape = forward_windows(c, X)
    s = c.mix
    # J holds d h_T / d h_t for every sample, starting at t = T
    J = np.broadcast_to(np.eye(c.n_h), (samples, c.n_h, c.n_h)).copy()
    curve = np.zeros(T)
    for tau in range(T):
        H, r, ht = tape[T - 1 - tau]
        dh = (1.0 - s) * (1.0 - ht ** 2)                 # (B, n_h)
        gr = r * (1.0 - r)
        Gr = c.G[None] * gr[:, None, :]                  # G diag(r')
        Dx = dh[:, :, None] * (c.W_hx[None] + Gr @ c.W_rx)
        Dh = np.eye(c.n_h)[None] * s[None, :, None] + dh[:, :, None] * (c.W_hh[None] + Gr @ c.W_rh)
        curve[tau] = np.mean(np.linalg.norm(J @ Dx, axis=(1, 2)))
        J = J @ Dh
    return curve


def effective_memory(c: LpGrnnCell, lag_max: int, rel: float = 1e-3, samples: int = 32, seed: int = 0) -> int:
    curve = sensitivity_curve(c, lag_max, samples, seed)
    if curve[0] == 0.0:
        return 0
    above = np.nonzero(curve > rel * curve[0])[0]
    return int(above.max()) if above.size else 0
