"""Standard nonlinear operator form (SNOF).

A SNOF is an affine discrete-time operator in feedback with a diagonal,
memoryless nonlinearity ``p = Gamma(q)``::

    x_next = A x  + Bp p  + Bu u  + beta_x
    q      = Cq x + Dqp p + Dqu u + beta_q
    y      = Cy x + Dyp p + Dyu u + beta_o

The update is canonical ``[x_{k+1}; q_k] = M [x_k; p_k; u_k; 1]`` and biases are
kept as explicit vectors rather than an augmented constant input.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch, NoConvergence, SingularInterconnection

KINDS = ("tanh", "saturation", "identity", "sigmoid")

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 100


def _sigmoid(v):
    return 0.5 * np.tanh(0.5 * v) + 0.5


@dataclass(frozen=True)
class Channel:
    """One scalar nonlinearity ``p = base(q + q_shift) - p_shift``.

    ``xi`` and ``mu`` are the upper sector and slope bounds (lower bounds are 0).
    The shifts are non-zero only after moving an equilibrium to the origin.
    """

    kind: str = "tanh"
    xi: float = 1.0
    mu: float = 1.0
    lo: float = -math.inf
    hi: float = math.inf
    q_shift: float = 0.0
    p_shift: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.kind == "saturation" and not self.lo < self.hi:
            raise ValueError("saturation channel needs lo < hi")
        if self.xi < 0 or self.mu < 0:
            raise ValueError("sector/slope bounds must be non-negative")

    def base(self, v):
        if self.kind == "tanh":
            return np.tanh(v)
        if self.kind == "saturation":
            return np.clip(v, self.lo, self.hi)
        if self.kind == "sigmoid":
            return _sigmoid(v)
        return np.asarray(v, dtype=float)

    def base_slope(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "tanh":
            return 1.0 - np.tanh(v) ** 2
        if self.kind == "saturation":
            return ((v > self.lo) & (v < self.hi)).astype(float)
        if self.kind == "sigmoid":
            s = _sigmoid(v)
            return s * (1.0 - s)
        return np.ones_like(v)

    def __call__(self, q):
        return self.base(np.asarray(q, dtype=float) + self.q_shift) - self.p_shift

    def slope(self, q):
        return self.base_slope(np.asarray(q, dtype=float) + self.q_shift)

    @property
    def through_origin(self) -> bool:
        return abs(float(self.base(self.q_shift)) - self.p_shift) < 1e-14

    @property
    def certifiable(self) -> bool:
        """Declared sector/slope bounds usable by the LMI (needs phi(0) = 0)."""
        return self.kind != "sigmoid" and self.through_origin

    def shifted(self, q_star: float) -> "Channel":
        """Re-centre so that ``q_star`` maps to the origin."""
        qs = self.q_shift + q_star
        return replace(self, q_shift=qs, p_shift=float(self.base(qs)))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "xi": self.xi, "mu": self.mu}
        if self.kind == "saturation":
            d.update(lo=self.lo, hi=self.hi)
        if self.q_shift or self.p_shift:
            d.update(q_shift=self.q_shift, p_shift=self.p_shift)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Channel":
        return cls(**{k: (float(v) if k != "kind" else v) for k, v in d.items()})


def tanh_channel() -> Channel:
    return Channel("tanh", 1.0, 1.0)


def saturation_channel(lo: float, hi: float) -> Channel:
    return Channel("saturation", 1.0, 1.0, lo=float(lo), hi=float(hi))


def sigmoid_channel() -> Channel:
    # sector bound undefined (sigma(0) != 0); slope bound 1/4
    return Channel("sigmoid", 0.0, 0.25)


def identity_channel() -> Channel:
    return Channel("identity", 1.0, 1.0)


@dataclass(frozen=True)
class NonlinearitySpec:
    channels: tuple[Channel, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))

    def __len__(self):
        return len(self.channels)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return NonlinearitySpec(self.channels[idx])
        if isinstance(idx, (list, tuple, np.ndarray)):
            return NonlinearitySpec(tuple(self.channels[i] for i in idx))
        return self.channels[idx]

    def __add__(self, other: "NonlinearitySpec") -> "NonlinearitySpec":
        return NonlinearitySpec(self.channels + other.channels)

    @classmethod
    def uniform(cls, kind: str, h: int) -> "NonlinearitySpec":
        factory = {"tanh": tanh_channel, "sigmoid": sigmoid_channel,
                   "identity": identity_channel}[kind]
        return cls(tuple(factory() for _ in range(h)))

    @property
    def xi(self) -> np.ndarray:
        return np.array([c.xi for c in self.channels])

    @property
    def mu(self) -> np.ndarray:
        return np.array([c.mu for c in self.channels])

    def __call__(self, q):
        """Apply channel-wise; ``q`` has shape ``(..., h)``."""
        q = np.asarray(q, dtype=float)
        out = np.empty_like(q)
        for i, ch in enumerate(self.channels):
            out[..., i] = ch(q[..., i])
        return out

    def slope(self, q):
        q = np.asarray(q, dtype=float)
        out = np.empty_like(q)
        for i, ch in enumerate(self.channels):
            out[..., i] = ch.slope(q[..., i])
        return out

    def shifted(self, q_star) -> "NonlinearitySpec":
        return NonlinearitySpec(tuple(c.shifted(float(s)) for c, s in zip(self.channels, q_star)))

    def to_list(self) -> list:
        return [c.to_dict() for c in self.channels]

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> "NonlinearitySpec":
        return cls(tuple(Channel.from_dict(d) for d in items))


def _frozen(a, shape, name):
    arr = np.array(a, dtype=float)
    if arr.size == 0:
        arr = arr.reshape(shape)
    if arr.shape != shape:
        raise DimensionMismatch(f"{name}: expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


_MATRICES = ("A", "Bp", "Bu", "Cq", "Dqp", "Dqu", "Cy", "Dyp", "Dyu")
_VECTORS = ("beta_x", "beta_q", "beta_o")


@dataclass(frozen=True, eq=False)
class Snof:
    A: np.ndarray
    Bp: np.ndarray
    Bu: np.ndarray
    Cq: np.ndarray
    Dqp: np.ndarray
    Dqu: np.ndarray
    Cy: np.ndarray
    Dyp: np.ndarray
    Dyu: np.ndarray
    beta_x: np.ndarray = None
    beta_q: np.ndarray = None
    beta_o: np.ndarray = None
    nl: NonlinearitySpec = field(default_factory=NonlinearitySpec)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float)) if np.size(self.A) else np.zeros((0, 0))
        n = A.shape[0]
        h = np.asarray(self.Dqp, dtype=float).reshape(-1).size
        h = int(round(math.sqrt(h)))
        m = _infer_cols(self.Bu, self.Dqu, self.Dyu)
        l = _infer_rows(self.Cy, self.Dyp, self.Dyu)
        shapes = {"A": (n, n), "Bp": (n, h), "Bu": (n, m), "Cq": (h, n), "Dqp": (h, h),
                  "Dqu": (h, m), "Cy": (l, n), "Dyp": (l, h), "Dyu": (l, m)}
        for name, shape in shapes.items():
            object.__setattr__(self, name, _frozen(getattr(self, name), shape, name))
        for name, size in zip(_VECTORS, (n, h, l)):
            v = getattr(self, name)
            v = np.zeros(size) if v is None else v
            object.__setattr__(self, name, _frozen(np.reshape(v, -1), (size,), name))
        nl = self.nl
        if not isinstance(nl, NonlinearitySpec):
            nl = NonlinearitySpec(tuple(nl))
            object.__setattr__(self, "nl", nl)
        if len(nl) != h:
            raise DimensionMismatch(f"nl has {len(nl)} channels, Dqp is {h}x{h}")

    # dimensions
    n = property(lambda self: self.A.shape[0])
    h = property(lambda self: self.Dqp.shape[0])
    m = property(lambda self: self.Bu.shape[1])
    l = property(lambda self: self.Cy.shape[0])

    @classmethod
    def zeros(cls, n: int, h: int, m: int, l: int, nl: NonlinearitySpec | None = None) -> "Snof":
        z = np.zeros
        if nl is None:
            nl = NonlinearitySpec.uniform("tanh", h)
        return cls(z((n, n)), z((n, h)), z((n, m)), z((h, n)), z((h, h)), z((h, m)),
                   z((l, n)), z((l, h)), z((l, m)), nl=nl)

    def replace(self, **changes) -> "Snof":
        return replace(self, **changes)

    def matrices(self) -> dict:
        return {k: getattr(self, k) for k in _MATRICES + _VECTORS}

    # serialization
    def to_dict(self) -> dict:
        d = {"dims": {"n": self.n, "h": self.h, "m": self.m, "l": self.l}}
        d.update({k: getattr(self, k).tolist() for k in _MATRICES + _VECTORS})
        d["nl"] = self.nl.to_list()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Snof":
        dims = d.get("dims")
        if dims is None:
            raise DimensionMismatch("SNOF document lacks 'dims'")
        n, h, m, l = (int(dims[k]) for k in "nhml")
        shapes = {"A": (n, n), "Bp": (n, h), "Bu": (n, m), "Cq": (h, n), "Dqp": (h, h),
                  "Dqu": (h, m), "Cy": (l, n), "Dyp": (l, h), "Dyu": (l, m)}
        kw = {}
        for k, shape in shapes.items():
            arr = np.array(d.get(k, np.zeros(shape)), dtype=float)
            kw[k] = arr.reshape(shape) if arr.size == shape[0] * shape[1] else arr
        for k, size in zip(_VECTORS, (n, h, l)):
            kw[k] = np.array(d.get(k, np.zeros(size)), dtype=float).reshape(-1)
        nl = NonlinearitySpec.from_list(d["nl"]) if "nl" in d else NonlinearitySpec.uniform("tanh", h)
        return cls(nl=nl, **kw)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_json(cls, path) -> "Snof":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _infer_cols(*mats):
    for M in mats:
        a = np.asarray(M, dtype=float)
        if a.ndim == 2:
            return a.shape[1]
    return 0


def _infer_rows(*mats):
    for M in mats:
        a = np.asarray(M, dtype=float)
        if a.ndim == 2:
            return a.shape[0]
        if a.ndim == 1 and a.size == 0:
            return 0
    return 0


class StepResult(NamedTuple):
    x_next: np.ndarray
    q: np.ndarray
    p: np.ndarray
    y: np.ndarray


def solve_loop(s: Snof, c: np.ndarray) -> np.ndarray:
    """Solve ``q = c + Dqp Gamma(q)`` for one or a batch of right-hand sides.

    Newton on the residual with the analytic diagonal Jacobian of Gamma, then a
    damped fixed-point fallback.
    """
    c = np.asarray(c, dtype=float)
    h = s.h
    if h == 0 or not np.any(s.Dqp):
        return c.copy()
    batch = c.ndim == 2
    C = c if batch else c[None, :]
    D = s.Dqp
    q = C.copy()
    eye = np.eye(h)
    for _ in range(NEWTON_MAX_ITER):
        F = q - (s.nl(q) @ D.T) - C
        if np.max(np.abs(F)) < NEWTON_TOL:
            return q if batch else q[0]
        J = eye[None] - D[None] * s.nl.slope(q)[:, None, :]
        try:
            dq = np.linalg.solve(J, -F[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        # backtracking on the residual norm
        step = 1.0
        base = np.max(np.abs(F), axis=1)
        for _ in range(30):
            qn = q + step * dq
            Fn = qn - (s.nl(qn) @ D.T) - C
            if np.all(np.max(np.abs(Fn), axis=1) <= (1 - 1e-4 * step) * base + NEWTON_TOL):
                break
            step *= 0.5
        q = qn
    # damped fixed point
    omega = 0.5
    for _ in range(20000):
        qn = (1 - omega) * q + omega * (C + s.nl(q) @ D.T)
        q = qn
        F = q - (s.nl(q) @ D.T) - C
        if np.max(np.abs(F)) < NEWTON_TOL:
            return q if batch else q[0]
    raise NoConvergence(f"implicit loop did not converge (residual {np.max(np.abs(F)):.3e})")


def eval_step(s: Snof, x, u=None) -> StepResult:
    """Evaluate one step, resolving the algebraic loop through Gamma."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.zeros(s.m) if u is None else np.asarray(u, dtype=float).reshape(-1)
    if x.size != s.n or u.size != s.m:
        raise DimensionMismatch(f"state/input sizes {x.size}/{u.size}, expected {s.n}/{s.m}")
    if not np.all(np.isfinite(u)):
        raise ValueError("input must be finite")
    q = solve_loop(s, s.Cq @ x + s.Dqu @ u + s.beta_q)
    p = s.nl(q)
    x_next = s.A @ x + s.Bp @ p + s.Bu @ u + s.beta_x
    y = s.Cy @ x + s.Dyp @ p + s.Dyu @ u + s.beta_o
    return StepResult(x_next, q, p, y)


def eval_batch(s: Snof, X, U=None) -> StepResult:
    """Vectorised :func:`eval_step` over rows of ``X`` (and ``U``)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.zeros((X.shape[0], s.m)) if U is None else np.atleast_2d(np.asarray(U, dtype=float))
    q = solve_loop(s, X @ s.Cq.T + U @ s.Dqu.T + s.beta_q)
    q = q.reshape(X.shape[0], s.h)
    p = s.nl(q)
    x_next = X @ s.A.T + p @ s.Bp.T + U @ s.Bu.T + s.beta_x
    y = X @ s.Cy.T + p @ s.Dyp.T + U @ s.Dyu.T + s.beta_o
    return StepResult(x_next, q, p, y)


def rollout(s: Snof, x0, inputs) -> tuple[np.ndarray, np.ndarray]:
    """Iterate the SNOF over an input sequence; returns (states, outputs).

    ``states[k]`` is the state before step ``k`` (so ``len(states) == K + 1``).
    """
    inputs = np.asarray(inputs, dtype=float).reshape(len(inputs), s.m)
    xs = [np.asarray(x0, dtype=float).reshape(-1)]
    ys = []
    for u in inputs:
        r = eval_step(s, xs[-1], u)
        xs.append(r.x_next)
        ys.append(r.y)
    return np.array(xs), np.array(ys).reshape(len(inputs), s.l)


# ---------------------------------------------------------------------------
# well-posedness


@dataclass(frozen=True)
class WellPosednessReport:
    method: str
    verdict: bool
    witness: object = None
    proof: bool = False
    det_one: bool = False
    nilpotency_index: int | None = None
    tried: tuple = ()

    def to_dict(self) -> dict:
        w = self.witness
        if isinstance(w, np.ndarray):
            w = w.tolist()
        return {"method": self.method, "verdict": self.verdict, "witness": w,
                "proof": self.proof, "det_R_is_one": self.det_one,
                "nilpotency_index": self.nilpotency_index, "tried": list(self.tried)}


def _topological_order(D: np.ndarray):
    """Channel order making D strictly lower triangular, or None if cyclic."""
    h = D.shape[0]
    dep = D != 0
    if np.any(np.diag(dep)):
        return None
    indeg = dep.sum(axis=1)  # row i depends on columns j
    order, ready = [], [i for i in range(h) if indeg[i] == 0]
    indeg = indeg.copy()
    while ready:
        j = ready.pop(0)
        order.append(j)
        for i in np.nonzero(dep[:, j])[0]:
            indeg[i] -= 1
            if indeg[i] == 0:
                ready.append(int(i))
    return order if len(order) == h else None


def nilpotency_index(D: np.ndarray, tol: float = 1e-12) -> int | None:
    h = D.shape[0]
    if h == 0:
        return 0
    scale = max(1.0, np.max(np.abs(D)))
    P = np.eye(h)
    for k in range(1, h + 1):
        P = P @ D
        if np.max(np.abs(P)) <= tol * scale ** k:
            return k
    return None


def _principal_minors_vanish(D: np.ndarray, tol: float = 1e-12, max_h: int = 16) -> bool:
    """All principal minors of D zero  <=>  det(I - D Delta) == 1 for every diagonal Delta."""
    h = D.shape[0]
    if h > max_h:
        return False
    scale = max(1.0, np.max(np.abs(D)))
    for size in range(1, h + 1):
        for idx in itertools.combinations(range(h), size):
            sub = D[np.ix_(idx, idx)]
            if abs(np.linalg.det(sub)) > tol * scale ** size:
                return False
    return True


def check_well_posed(s: Snof, samples: int = 2000, seed: int = 0) -> WellPosednessReport:
    """Check invertibility of ``R = I - Dqp Delta`` over admissible diagonal gains.

    Methods are tried in order: structural strict triangularity (under a channel
    permutation), vanishing principal minors (nilpotent for every Delta),
    small gain, and finally randomized sampling (evidence only).
    """
    D = s.Dqp
    h = s.h
    mu = s.nl.mu if h else np.zeros(0)
    nil = nilpotency_index(D) if h else 0
    tried = []

    tried.append("strictly-triangular")
    order = _topological_order(D) if h else []
    if order is not None:
        return WellPosednessReport("strictly-triangular", True, witness=list(order), proof=True,
                                   det_one=True, nilpotency_index=nil, tried=tuple(tried))

    tried.append("nilpotent")
    if _principal_minors_vanish(D):
        return WellPosednessReport("nilpotent", True, witness=nil, proof=True, det_one=True,
                                   nilpotency_index=nil, tried=tuple(tried))

    tried.append("small-gain")
    gain = float(np.max(np.sum(np.abs(D * mu[None, :]), axis=1)))
    if gain < 1.0:
        return WellPosednessReport("small-gain", True, witness=gain, proof=True,
                                   nilpotency_index=nil, tried=tuple(tried))

    tried.append("randomized")
    rng = np.random.default_rng(seed)
    eye = np.eye(h)
    worst = 0.0
    dirs = rng.uniform(0.0, 1.0, size=(samples, h)) * mu
    corners = []
    if h <= 12:
        corners = [np.array(c) * mu for c in itertools.product((0.0, 1.0), repeat=h)]
    for delta in itertools.chain(corners, dirs):
        M = D * delta[None, :]
        # a real eigenvalue >= 1 of D Delta puts a singular point on the segment [0, Delta]
        ev = np.linalg.eigvals(M)
        real = ev[np.abs(ev.imag) < 1e-12].real
        hit = real[real >= 1.0 - 1e-12]
        if hit.size:
            witness = delta / hit.max()
            return WellPosednessReport("randomized", False, witness=witness, proof=False,
                                       nilpotency_index=nil, tried=tuple(tried))
        worst = max(worst, np.linalg.cond(eye - M))
    return WellPosednessReport("randomized", True, witness=worst, proof=False,
                               nilpotency_index=nil, tried=tuple(tried))


# ---------------------------------------------------------------------------
# loop transformation and interconnection


def loop_transform_sigmoid(h: int) -> Snof:
    """Static two-port realising ``sigma(u) = tanh(u / 2) / 2 + 1/2`` through tanh channels.

    Input ``u`` is the sigmoid argument, output ``y`` the sigmoid value:
    ``q' = u / 2``, ``p' = tanh(q')``, ``y = p' / 2 + 1/2``.
    """
    z = np.zeros
    half = 0.5 * np.eye(h)
    return Snof(z((0, 0)), z((0, h)), z((0, h)), z((h, 0)), z((h, h)), half,
                z((h, 0)), half, z((h, h)), beta_o=np.full(h, 0.5),
                nl=NonlinearitySpec.uniform("tanh", h))


def star_compose(m: Snof, g: Snof, channels: Sequence[int] | None = None) -> Snof:
    """Absorb ``g`` into the channels ``channels`` of ``m`` (Redheffer star product).

    The selected channels of ``m`` are no longer driven by ``m.nl``: their
    ``q`` feeds the input of ``g`` and the output of ``g`` replaces their ``p``.
    The composite state is ``[x_m; x_g]`` and its channels are
    ``[kept channels of m; channels of g]``. Defaults to the sigmoid channels of ``m``.
    """
    if channels is None:
        channels = [i for i, c in enumerate(m.nl.channels) if c.kind == "sigmoid"]
    O = list(channels)
    K = [i for i in range(m.h) if i not in set(O)]
    if g.m != len(O) or g.l != len(O):
        raise DimensionMismatch(f"g is {g.m}-in/{g.l}-out, {len(O)} channels to close")
    nm, ng, hk, hg, mu = m.n, g.n, len(K), g.h, m.m
    # signal vector s = [x_m, x_g, p_k, p_g, u, 1]
    cols = np.cumsum([0, nm, ng, hk, hg, mu, 1])
    dim = cols[-1]

    def place(blocks):
        out = np.zeros((blocks[0][1].shape[0] if blocks else 0, dim))
        for slot, M in blocks:
            out[:, cols[slot]:cols[slot + 1]] += M
        return out

    Doo = m.Dqp[np.ix_(O, O)]
    a_q = place([(0, m.Cq[O]), (2, m.Dqp[np.ix_(O, K)]), (4, m.Dqu[O]), (5, m.beta_q[O][:, None])])
    a_p = place([(1, g.Cy), (3, g.Dyp), (5, g.beta_o[:, None])])
    R = np.eye(len(O)) - g.Dyu @ Doo
    if np.linalg.cond(R) > 1e12:
        raise SingularInterconnection("I - Dyu_g Dqp_m[open, open] is singular")
    L = np.linalg.solve(R, a_p + g.Dyu @ a_q)     # p_o = L s
    Kq = a_q + Doo @ L                             # q_o = Kq s

    x_m = place([(0, m.A), (2, m.Bp[:, K]), (4, m.Bu), (5, m.beta_x[:, None])]) + m.Bp[:, O] @ L
    x_g = place([(1, g.A), (3, g.Bp), (5, g.beta_x[:, None])]) + g.Bu @ Kq
    q_k = place([(0, m.Cq[K]), (2, m.Dqp[np.ix_(K, K)]), (4, m.Dqu[K]),
                 (5, m.beta_q[K][:, None])]) + m.Dqp[np.ix_(K, O)] @ L
    q_g = place([(1, g.Cq), (3, g.Dqp), (5, g.beta_q[:, None])]) + g.Dqu @ Kq
    y = place([(0, m.Cy), (2, m.Dyp[:, K]), (4, m.Dyu), (5, m.beta_o[:, None])]) + m.Dyp[:, O] @ L

    X = np.vstack([x_m, x_g])
    Q = np.vstack([q_k, q_g])
    sx = slice(cols[0], cols[2])
    sp = slice(cols[2], cols[4])
    su = slice(cols[4], cols[5])
    return Snof(X[:, sx], X[:, sp], X[:, su], Q[:, sx], Q[:, sp], Q[:, su],
                y[:, sx], y[:, sp], y[:, su],
                beta_x=X[:, -1], beta_q=Q[:, -1], beta_o=y[:, -1],
                nl=m.nl[K] + g.nl)
