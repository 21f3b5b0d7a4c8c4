"""Gated recurrent cell whose gate enters additively, so it exports to an all-tanh SNOF.

    r   = sigma(W_rx x + b_rx + W_rh h + b_rh)
    h~  = tanh(W_hx x + b_hx + G r + b_hr + W_hh h + b_hh)
    h+  = (1 - sigma(alpha)) h~ + sigma(alpha) h
    y   = W_out h+ + b_out
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from ..errors import DimensionMismatch
from ..snof import NonlinearitySpec, Snof, _sigmoid as sigmoid, loop_transform_sigmoid, star_compose

WEIGHTS = ("W_rx", "W_rh", "W_hx", "W_hh", "G")
BIASES = ("b_rx", "b_rh", "b_hx", "b_hr", "b_hh")


def logit(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("post-sigmoid values must lie strictly inside (0, 1)")
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True, eq=False)
class LpGrnnCell:
    W_rx: np.ndarray
    W_rh: np.ndarray
    W_hx: np.ndarray
    W_hh: np.ndarray
    G: np.ndarray
    b_rx: np.ndarray
    b_rh: np.ndarray
    b_hx: np.ndarray
    b_hr: np.ndarray
    b_hh: np.ndarray
    alpha: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            arr = np.array(getattr(self, f.name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{f.name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, f.name, arr)
        nh, nx = self.W_hx.shape
        expect = {"W_rx": (nh, nx), "W_rh": (nh, nh), "W_hh": (nh, nh), "G": (nh, nh),
                  "alpha": (nh,)}
        expect.update({b: (nh,) for b in BIASES})
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.W_out.ndim != 2 or self.W_out.shape[1] != nh:
            raise DimensionMismatch("W_out must be l x n_h")
        if self.b_out.shape != (self.W_out.shape[0],):
            raise DimensionMismatch("b_out must match the rows of W_out")

    @property
    def n_h(self) -> int:
        return self.W_hx.shape[0]

    @property
    def n_x(self) -> int:
        return self.W_hx.shape[1]

    @property
    def n_y(self) -> int:
        return self.W_out.shape[0]

    @property
    def mix(self) -> np.ndarray:
        """sigma(alpha): weight on the previous state."""
        return sigmoid(self.alpha)

    @property
    def b_r(self) -> np.ndarray:
        return self.b_rx + self.b_rh

    @property
    def b_h(self) -> np.ndarray:
        return self.b_hx + self.b_hr + self.b_hh

    def params(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **changes) -> "LpGrnnCell":
        return replace(self, **changes)

    @classmethod
    def init(cls, n_h: int, n_x: int, n_y: int = 1, rng=None) -> "LpGrnnCell":
        """Uniform(+-1/sqrt(n_h)) weights, zero biases, alpha logits at 0."""
        rng = np.random.default_rng(rng)
        k = 1.0 / np.sqrt(n_h)
        U = lambda *s: rng.uniform(-k, k, size=s)
        return cls(W_rx=U(n_h, n_x), W_rh=U(n_h, n_h), W_hx=U(n_h, n_x), W_hh=U(n_h, n_h),
                   G=U(n_h, n_h), **{b: np.zeros(n_h) for b in BIASES},
                   alpha=np.zeros(n_h), W_out=U(n_y, n_h), b_out=np.zeros(n_y))

    @classmethod
    def random(cls, n_h: int, n_x: int, n_y: int = 1, rng=None, scale: float = 1.0) -> "LpGrnnCell":
        rng = np.random.default_rng(rng)
        N = lambda *s: scale * rng.standard_normal(s)
        return cls(W_rx=N(n_h, n_x), W_rh=N(n_h, n_h), W_hx=N(n_h, n_x), W_hh=N(n_h, n_h),
                   G=N(n_h, n_h), **{b: N(n_h) for b in BIASES},
                   alpha=N(n_h), W_out=N(n_y, n_h), b_out=N(n_y))

    @classmethod
    def zeros(cls, n_h: int, n_x: int, n_y: int = 1) -> "LpGrnnCell":
        return cls.random(n_h, n_x, n_y, scale=0.0)

    def to_dict(self, alpha_encoding: str = "logit") -> dict:
        d = {k: v.tolist() for k, v in self.params().items()}
        if alpha_encoding == "post_sigmoid":
            d["alpha"] = self.mix.tolist()
        elif alpha_encoding != "logit":
            raise ValueError(f"unknown alpha encoding {alpha_encoding!r}")
        d["alpha_encoding"] = alpha_encoding
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LpGrnnCell":
        d = dict(d)
        enc = d.pop("alpha_encoding", "logit")
        if enc == "post_sigmoid":
            d["alpha"] = logit(d["alpha"])
        elif enc != "logit":
            raise ValueError(f"unknown alpha encoding {enc!r}")
        names = {f.name for f in fields(cls)}
        missing = names - d.keys()
        if missing:
            raise KeyError(f"cell document lacks {sorted(missing)}")
        # keys outside the parameter set (provenance, hashes) are ignored
        return cls(**{k: np.asarray(d[k], dtype=float) for k in names})

    def to_json(self, path, alpha_encoding: str = "logit") -> None:
        Path(path).write_text(json.dumps(self.to_dict(alpha_encoding), indent=2))

    @classmethod
    def from_json(cls, path) -> "LpGrnnCell":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_dims(c: LpGrnnCell, h, x):
    if h.shape[-1] != c.n_h or x.shape[-1] != c.n_x:
        raise DimensionMismatch(f"expected state {c.n_h} and input {c.n_x}, got {h.shape[-1]} and {x.shape[-1]}")


def lpgrnn_step(c: LpGrnnCell, h_prev, x):
    """One step, batched over leading axes. Returns ``(h_next, r, h_tilde)``."""
    h_prev = np.asarray(h_prev, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_dims(c, h_prev, x)
    r = sigmoid(x @ c.W_rx.T + h_prev @ c.W_rh.T + c.b_r)
    h_tilde = np.tanh(x @ c.W_hx.T + r @ c.G.T + h_prev @ c.W_hh.T + c.b_h)
    s = c.mix
    return (1.0 - s) * h_tilde + s * h_prev, r, h_tilde


def lpgrnn_forward(c: LpGrnnCell, h_prev, x):
    h_next, _, _ = lpgrnn_step(c, h_prev, x)
    return h_next, h_next @ c.W_out.T + c.b_out


def lpgrnn_rollout(c: LpGrnnCell, h0, inputs):
    """Run a sequence; returns hidden states ``(K+1, n_h)`` and outputs ``(K, l)``."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    H = [np.asarray(h0, dtype=float)]
    Y = []
    for x in inputs:
        h, y = lpgrnn_forward(c, H[-1], x)
        H.append(h)
        Y.append(y)
    return np.array(H), np.array(Y).reshape(len(inputs), c.n_y)


def lpgrnn_intermediate(c: LpGrnnCell) -> Snof:
    """SNOF with a tanh candidate channel and a sigmoid reset-gate channel.

    Internal only: the sigmoid channel is neither sector-through-origin nor
    odd, so this form is not handed to the certifier.
    """
    nh, nx = c.n_h, c.n_x
    s = c.mix
    A = np.diag(s)
    Bp = np.hstack([np.diag(1.0 - s), np.zeros((nh, nh))])
    Z = np.zeros((nh, nh))
    nl = NonlinearitySpec.uniform("tanh", nh) + NonlinearitySpec.uniform("sigmoid", nh)
    return Snof(
        A=A, Bp=Bp, Bu=np.zeros((nh, nx)),
        Cq=np.vstack([c.W_hh, c.W_rh]),
        Dqp=np.block([[Z, c.G], [Z, Z]]),
        Dqu=np.vstack([c.W_hx, c.W_rx]),
        Cy=c.W_out @ A, Dyp=c.W_out @ Bp, Dyu=np.zeros((c.n_y, nx)),
        beta_x=np.zeros(nh), beta_q=np.concatenate([c.b_h, c.b_r]), beta_o=c.b_out,
        nl=nl,
    )


def lpgrnn_to_snof(c: LpGrnnCell) -> Snof:
    """All-tanh SNOF: the sigmoid gate is replaced by its tanh loop transform."""
    m = lpgrnn_intermediate(c)
    return star_compose(m, loop_transform_sigmoid(c.n_h))


def lpgrnn_from_snof(s: Snof, W_out=None, b_out=None, tol: float = 1e-9) -> LpGrnnCell:
    """Recover cell weights from an exported SNOF (inverse of :func:`lpgrnn_to_snof`).

    The reset-gate channel rows carry the halving of the loop transform, and
    the candidate bias carries ``G / 2``. Biases are lumped into ``b_rx`` and
    ``b_hx``. If ``W_out`` is not given it is taken as ``Cy A^{-1}``.
    """
    nh = s.n
    if s.h != 2 * nh:
        raise DimensionMismatch("expected q-dimension 2 * n_h")
    mix = np.diag(s.A).copy()
    if np.max(np.abs(s.A - np.diag(mix))) > tol:
        raise ValueError("A must be diagonal")
    G = 2.0 * s.Dqp[:nh, nh:]
    if np.max(np.abs(s.Dqp[nh:])) > tol or np.max(np.abs(s.Dqp[:nh, :nh])) > tol:
        raise ValueError("Dqp does not have the gated-cell sparsity")
    if W_out is None:
        W_out = s.Cy / mix
    if b_out is None:
        b_out = s.beta_o
    z = np.zeros(nh)
    return LpGrnnCell(
        W_rx=2.0 * s.Dqu[nh:], W_rh=2.0 * s.Cq[nh:], W_hx=s.Dqu[:nh], W_hh=s.Cq[:nh], G=G,
        b_rx=2.0 * s.beta_q[nh:], b_rh=z, b_hx=s.beta_q[:nh] - 0.5 * G.sum(axis=1), b_hr=z, b_hh=z,
        alpha=logit(mix), W_out=np.atleast_2d(W_out), b_out=np.atleast_1d(b_out),
    )
