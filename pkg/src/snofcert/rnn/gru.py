"""Vanilla GRU cell and its SNOF-like operator with multivariate (gated) channels."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..errors import DimensionMismatch
from ..snof import _sigmoid as sigmoid


@dataclass(frozen=True, eq=False)
class GruCell:
    W_rx: np.ndarray
    W_zx: np.ndarray
    W_hx: np.ndarray
    W_rh: np.ndarray
    W_zh: np.ndarray
    W_hrh: np.ndarray
    b_rx: np.ndarray
    b_rh: np.ndarray
    b_zx: np.ndarray
    b_zh: np.ndarray
    b_hx: np.ndarray
    b_hrh: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            arr = np.array(getattr(self, f.name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{f.name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, f.name, arr)
        nh, nx = self.W_rx.shape
        for name in ("W_zx", "W_hx"):
            if getattr(self, name).shape != (nh, nx):
                raise DimensionMismatch(f"{name} must be {nh}x{nx}")
        for name in ("W_rh", "W_zh", "W_hrh"):
            if getattr(self, name).shape != (nh, nh):
                raise DimensionMismatch(f"{name} must be {nh}x{nh}")
        for name in ("b_rx", "b_rh", "b_zx", "b_zh", "b_hx", "b_hrh"):
            if getattr(self, name).shape != (nh,):
                raise DimensionMismatch(f"{name} must have length {nh}")

    @property
    def n_h(self) -> int:
        return self.W_rx.shape[0]

    @property
    def n_x(self) -> int:
        return self.W_rx.shape[1]

    @classmethod
    def random(cls, n_h: int, n_x: int, rng=None, scale: float = 1.0) -> "GruCell":
        rng = np.random.default_rng(rng)
        kw = {}
        for f in fields(cls):
            if f.name.startswith("W_"):
                shape = (n_h, n_x) if f.name.endswith("x") else (n_h, n_h)
            else:
                shape = (n_h,)
            kw[f.name] = scale * rng.standard_normal(shape)
        return cls(**kw)

    @classmethod
    def zeros(cls, n_h: int, n_x: int) -> "GruCell":
        return cls.random(n_h, n_x, scale=0.0)


def gru_forward(c: GruCell, h_prev, x) -> np.ndarray:
    h_prev = np.asarray(h_prev, dtype=float)
    x = np.asarray(x, dtype=float)
    if h_prev.shape != (c.n_h,) or x.shape != (c.n_x,):
        raise DimensionMismatch("state or input size does not match the cell")
    r = sigmoid(c.W_rx @ x + c.b_rx + c.W_rh @ h_prev + c.b_rh)
    z = sigmoid(c.W_zx @ x + c.b_zx + c.W_zh @ h_prev + c.b_zh)
    h_tilde = np.tanh(c.W_hx @ x + c.b_hx + c.W_hrh @ (r * h_prev) + c.b_hrh)
    return (1.0 - z) * h_prev + z * h_tilde


@dataclass(frozen=True, eq=False)
class GruSnofLike:
    """``[h_next; q] = M [h; p; x; 1]`` with ``q = [q_h, q_ht, q_rh, q_z, q_r]``.

    Channels: ``p_h = sigma(q_z) * q_h``, ``p_ht = tanh(q_ht)``,
    ``p_rh = sigma(q_r) * q_rh``. Only ``p_ht`` is a scalar, sector/slope-bounded
    channel; the two Hadamard channels depend on two inputs each.
    """

    M: np.ndarray
    n_h: int
    n_x: int

    @property
    def certifiable(self) -> np.ndarray:
        nh = self.n_h
        return np.array([False] * nh + [True] * nh + [False] * nh)

    def blocks(self):
        nh, nx = self.n_h, self.n_x
        rows = np.cumsum([0, nh, 5 * nh])
        cols = np.cumsum([0, nh, 3 * nh, nx, 1])
        X, Q = self.M[: rows[1]], self.M[rows[1]:]
        split = lambda R: [R[:, cols[i]:cols[i + 1]] for i in range(4)]
        return split(X), split(Q)

    def gamma(self, q):
        nh = self.n_h
        q_h, q_ht, q_rh, q_z, q_r = (q[i * nh:(i + 1) * nh] for i in range(5))
        return np.concatenate([sigmoid(q_z) * q_h, np.tanh(q_ht), sigmoid(q_r) * q_rh])

    def step(self, h, x):
        (A, Bp, Bu, bx), (Cq, Dqp, Dqu, bq) = self.blocks()
        c = Cq @ h + Dqu @ x + bq[:, 0]
        # Dqp is nilpotent, so the fixed-point iteration is exact after 3 passes
        p = np.zeros(3 * self.n_h)
        for _ in range(3 * self.n_h + 1):
            q = c + Dqp @ p
            p_new = self.gamma(q)
            if np.array_equal(p_new, p):
                break
            p = p_new
        q = c + Dqp @ p
        return A @ h + Bp @ p + Bu @ x + bx[:, 0], q, p


def gru_to_snof_like(c: GruCell) -> GruSnofLike:
    nh, nx = c.n_h, c.n_x
    I, Z = np.eye(nh), np.zeros((nh, nh))
    Zx, z1 = np.zeros((nh, nx)), np.zeros((nh, 1))
    col = lambda v: np.asarray(v).reshape(nh, 1)
    M = np.block([
        [I, I, Z, Z, Zx, z1],
        [-I, Z, I, Z, Zx, z1],
        [Z, Z, Z, c.W_hrh, c.W_hx, col(c.b_hx + c.b_hrh)],
        [I, Z, Z, Z, Zx, z1],
        [c.W_zh, Z, Z, Z, c.W_zx, col(c.b_zx + c.b_zh)],
        [c.W_rh, Z, Z, Z, c.W_rx, col(c.b_rx + c.b_rh)],
    ])
    return GruSnofLike(M, nh, nx)
