"""LTI plant, scalers, saturated PI controller and the holistic closed-loop SNOF.

The open interconnection (controller input ``u_c`` left free) follows the
block layout of the plant/controller/sensor composition exactly. The loop is
closed through a one-sample output register ``z_{k+1} = S y_k`` with
``u_c = r - z``, which keeps the channel coupling strictly block-lower-triangular
even when the sensor reads the controller output without delay.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .errors import DegenerateColumn, DimensionChainBroken
from .snof import NonlinearitySpec, Snof, saturation_channel


def zoh_discretize(Ac, Bc, Ts: float):
    """Exact sampling under piecewise-constant input: ``expm([[Ac, Bc], [0, 0]] Ts)``."""
    if Ts <= 0:
        raise ValueError("Ts must be positive")
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    Bc = np.asarray(Bc, dtype=float).reshape(Ac.shape[0], -1)
    n, m = Bc.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = expm(M * Ts)
    return E[:n, :n], E[:n, n:]


# ---------------------------------------------------------------- scaling

@dataclass(frozen=True, eq=False)
class Scaler:
    """``v_scaled = sigma_i * v + theta_i`` on the sensor input, ``y = sigma_o * y_net + theta_o`` on its output."""

    sigma_i: np.ndarray
    theta_i: np.ndarray
    sigma_o: np.ndarray = field(default_factory=lambda: np.ones(1))
    theta_o: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        for name in ("sigma_i", "theta_i", "sigma_o", "theta_o"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if arr.ndim == 2:
                arr = np.diag(arr).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.theta_i.shape != self.sigma_i.shape:
            raise ValueError("sigma_i and theta_i must have the same length")
        if np.any(self.sigma_i <= 0) or np.any(self.sigma_o <= 0):
            raise ValueError("scaling gains must be positive")

    @property
    def m(self) -> int:
        return self.sigma_i.size

    @property
    def Sigma_i(self) -> np.ndarray:
        return np.diag(self.sigma_i)

    def forward(self, v):
        return self.sigma_i * np.asarray(v, dtype=float) + self.theta_i

    def inverse(self, s):
        return (np.asarray(s, dtype=float) - self.theta_i) / self.sigma_i

    def output(self, y_net):
        return self.sigma_o * np.asarray(y_net, dtype=float) + self.theta_o

    def output_inverse(self, y):
        return (np.asarray(y, dtype=float) - self.theta_o) / self.sigma_o

    @classmethod
    def identity(cls, m: int, l: int = 1) -> "Scaler":
        return cls(np.ones(m), np.zeros(m), np.ones(l), np.zeros(l))

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("sigma_i", "theta_i", "sigma_o", "theta_o")}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(**{k: d[k] for k in ("sigma_i", "theta_i", "sigma_o", "theta_o") if k in d})


def _minmax(data, lo, hi, what):
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    dmin, dmax = data.min(axis=0), data.max(axis=0)
    bad = np.nonzero(dmax <= dmin)[0]
    if bad.size:
        raise DegenerateColumn(f"{what} column {int(bad[0])} is constant")
    sigma = (hi - lo) / (dmax - dmin)
    return sigma, lo - sigma * dmin, dmin, dmax


def fit_scaler(inputs, lo: float = 0.0, hi: float = 1.0, outputs=None) -> Scaler:
    """Min-max scaler mapping the column extremes of ``inputs`` onto ``[lo, hi]``.

    If training targets ``outputs`` are given, the output map takes the
    network range ``[lo, hi]`` back onto their extremes.
    """
    if hi <= lo:
        raise ValueError("need lo < hi")
    s_i, t_i, _, _ = _minmax(inputs, lo, hi, "input")
    if outputs is None:
        return Scaler(s_i, t_i)
    s, t, _, _ = _minmax(outputs, lo, hi, "output")
    return Scaler(s_i, t_i, 1.0 / s, -t / s)


# ---------------------------------------------------------------- plant

@dataclass(frozen=True, eq=False)
class PlantLti:
    """Discrete plant ``x+ = A x + B u``, measured ``y = C_delta x + D_delta u``.

    ``C_hidden``/``D_hidden`` hold true outputs that are not measured (the ones a
    virtual sensor estimates); they are only used for direct-feedback
    comparisons and for reporting.
    """

    A: np.ndarray
    B: np.ndarray
    C_delta: np.ndarray
    D_delta: np.ndarray
    Ts: float | None = None
    C_hidden: np.ndarray | None = None
    D_hidden: np.ndarray | None = None
    output_names: tuple = ()
    hidden_names: tuple = ()
    x0: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        t = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(t, -1)
        C = np.asarray(self.C_delta, dtype=float).reshape(-1, t)
        D = np.asarray(self.D_delta, dtype=float).reshape(C.shape[0], B.shape[1])
        vals = {"A": A, "B": B, "C_delta": C, "D_delta": D}
        if self.C_hidden is not None:
            Ch = np.asarray(self.C_hidden, dtype=float).reshape(-1, t)
            vals["C_hidden"] = Ch
            Dh = np.zeros((Ch.shape[0], B.shape[1])) if self.D_hidden is None else self.D_hidden
            vals["D_hidden"] = np.asarray(Dh, dtype=float).reshape(Ch.shape[0], B.shape[1])
        if self.x0 is not None:
            vals["x0"] = np.asarray(self.x0, dtype=float).reshape(t)
        for k, v in vals.items():
            v = v.copy()
            v.setflags(write=False)
            object.__setattr__(self, k, v)
        names = tuple(self.output_names) or tuple(f"y{i + 1}" for i in range(C.shape[0]))
        hidden = tuple(self.hidden_names) or tuple(f"h{i + 1}" for i in range(self.n_hidden))
        if len(names) != C.shape[0] or len(hidden) != self.n_hidden:
            raise DimensionChainBroken("output name count does not match output rows")
        object.__setattr__(self, "output_names", names)
        object.__setattr__(self, "hidden_names", hidden)

    @property
    def t(self) -> int:
        return self.A.shape[0]

    @property
    def s(self) -> int:
        return self.B.shape[1]

    @property
    def n_out(self) -> int:
        return self.C_delta.shape[0]

    @property
    def n_hidden(self) -> int:
        return 0 if self.C_hidden is None else self.C_hidden.shape[0]

    @property
    def C_ext(self) -> np.ndarray:
        """``[C_delta; 0]``: the sensor sees the measured outputs and the plant input."""
        return np.vstack([self.C_delta, np.zeros((self.s, self.t))])

    @property
    def D_ext(self) -> np.ndarray:
        return np.vstack([self.D_delta, np.eye(self.s)])

    @classmethod
    def from_continuous(cls, Ac, Bc, C_delta, D_delta, Ts: float, **kw) -> "PlantLti":
        Ad, Bd = zoh_discretize(Ac, Bc, Ts)
        return cls(Ad, Bd, C_delta, D_delta, Ts=Ts, **kw)

    def step(self, x, u):
        return self.A @ x + self.B @ u, self.C_delta @ x + self.D_delta @ u

    def hidden_output(self, x, u):
        if self.C_hidden is None:
            return np.zeros(0)
        return self.C_hidden @ x + self.D_hidden @ u

    def to_dict(self) -> dict:
        d = {"A": self.A.tolist(), "B": self.B.tolist(), "C_delta": self.C_delta.tolist(),
             "D_delta": self.D_delta.tolist(), "Ts": self.Ts, "output_names": list(self.output_names)}
        if self.C_hidden is not None:
            d.update(C_hidden=self.C_hidden.tolist(), D_hidden=self.D_hidden.tolist(),
                     hidden_names=list(self.hidden_names))
        if self.x0 is not None:
            d["x0"] = self.x0.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlantLti":
        d = dict(d)
        if d.pop("continuous", False):
            Ac, Bc, Ts = d.pop("A"), d.pop("B"), d.pop("Ts")
            return cls.from_continuous(Ac, Bc, d.pop("C_delta"), d.pop("D_delta"), Ts, **d)
        return cls(**d)


# ---------------------------------------------------------------- controller

@dataclass(frozen=True, eq=False)
class PiControllerSnof:
    """Saturated controller ``x+ = A x + Bp p + Bu e``, ``q = Cq x + Dqu e``, ``p = clip(q, y_min, y_max)``."""

    snof: Snof
    y_min: np.ndarray
    y_max: np.ndarray

    def __post_init__(self):
        s = self.snof
        if np.any(s.Dqp != 0):
            raise DimensionChainBroken("controller Dqp must be zero (no loop through the saturation)")
        for name in ("y_min", "y_max"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(s.h)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.y_min >= self.y_max):
            raise ValueError("need y_min < y_max")

    @property
    def s(self) -> int:
        return self.snof.h

    @property
    def n_in(self) -> int:
        return self.snof.m

    @classmethod
    def from_matrices(cls, A, Bu, Cq, Dqu, y_min, y_max, Bp=None) -> "PiControllerSnof":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        Cq = np.atleast_2d(np.asarray(Cq, dtype=float))
        Bu = np.atleast_2d(np.asarray(Bu, dtype=float))
        Dqu = np.atleast_2d(np.asarray(Dqu, dtype=float))
        n, s, v = A.shape[0], Cq.shape[0], Bu.shape[1]
        y_min = np.broadcast_to(np.asarray(y_min, dtype=float), (s,))
        y_max = np.broadcast_to(np.asarray(y_max, dtype=float), (s,))
        nl = NonlinearitySpec(tuple(saturation_channel(lo, hi) for lo, hi in zip(y_min, y_max)))
        snof = Snof(A=A, Bp=np.zeros((n, s)) if Bp is None else Bp, Bu=Bu, Cq=Cq,
                    Dqp=np.zeros((s, s)), Dqu=Dqu, Cy=np.zeros((s, n)), Dyp=np.eye(s),
                    Dyu=np.zeros((s, v)), nl=nl)
        return cls(snof, y_min, y_max)

    def to_dict(self) -> dict:
        s = self.snof
        return {"A": s.A.tolist(), "B_u": s.Bu.tolist(), "C_q": s.Cq.tolist(), "D_qu": s.Dqu.tolist(),
                "B_p": s.Bp.tolist(), "y_min": self.y_min.tolist(), "y_max": self.y_max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PiControllerSnof":
        return cls.from_matrices(d["A"], d["B_u"], d["C_q"], d["D_qu"], d["y_min"], d["y_max"], d.get("B_p"))


def make_pi_controller(Kp, Ki, Ts: float, y_min, y_max) -> PiControllerSnof:
    """Forward-Euler PI: ``x+ = x + Ts e``, ``q = Ki x + Kp e``, so ``q_k = Kp e_k + Ki Ts sum_{j<k} e_j``."""
    if Ts <= 0:
        raise ValueError("Ts must be positive")
    Kp = np.atleast_1d(np.asarray(Kp, dtype=float))
    Ki = np.broadcast_to(np.asarray(Ki, dtype=float), Kp.shape)
    s = Kp.size
    return PiControllerSnof.from_matrices(np.eye(s), Ts * np.eye(s), np.diag(Ki), np.diag(Kp), y_min, y_max)


# ---------------------------------------------------------------- closed loop

@dataclass(frozen=True, eq=False)
class ClosedLoopSnof:
    """Composite over state ``[x_c; x_p; x_n; z]`` and channels ``[p_c; p_n]``.

    ``open`` is the interconnection with the controller input ``u_c`` as the
    free input; ``snof`` closes it with ``u_c = r - z`` (``delay=1``) or
    ``u_c = r - S y`` (``delay=0``) and takes the reference ``r`` as input.
    Outputs of both are ``[plant measured; sensor; plant hidden]``.
    """

    snof: Snof
    open: Snof
    plant: PlantLti
    ctrl: PiControllerSnof
    sensor: Snof | None
    scaler: Scaler | None
    feedback: tuple
    delay: int
    state_slices: dict
    channel_slices: dict
    output_names: tuple
    S: np.ndarray

    def output_index(self, name: str) -> int:
        return self.output_names.index(name)

    def split_state(self, x) -> dict:
        return {k: np.asarray(x)[..., sl] for k, sl in self.state_slices.items()}


def _slices(sizes: Sequence[tuple]) -> dict:
    out, at = {}, 0
    for name, size in sizes:
        out[name] = slice(at, at + size)
        at += size
    return out


def assemble_open_loop(plant: PlantLti, ctrl: PiControllerSnof, sensor: Snof | None = None,
                       scl: Scaler | None = None) -> Snof:
    """The holistic interconnection with ``p_c = u_p`` and scaled ``[y; u_p]`` feeding the sensor."""
    c = ctrl.snof
    if c.h != plant.s:
        raise DimensionChainBroken(f"p_c = u_p: controller has {c.h} channels, plant has {plant.s} inputs")
    t, s = plant.t, plant.s
    nc = c.n
    Cm, Dm = plant.C_delta, plant.D_delta
    Ch = plant.C_hidden if plant.n_hidden else np.zeros((0, t))
    Dh = plant.D_hidden if plant.n_hidden else np.zeros((0, s))
    Z = np.zeros
    if sensor is None:
        nl = c.nl
        return Snof(
            A=np.block([[c.A, Z((nc, t))], [Z((t, nc)), plant.A]]),
            Bp=np.vstack([c.Bp, plant.B]),
            Bu=np.vstack([c.Bu, Z((t, c.m))]),
            Cq=np.hstack([c.Cq, Z((s, t))]), Dqp=c.Dqp, Dqu=c.Dqu,
            Cy=np.block([[Z((plant.n_out, nc)), Cm], [Z((len(Ch), nc)), Ch]]),
            Dyp=np.vstack([Dm, Dh]), Dyu=Z((plant.n_out + len(Ch), c.m)),
            nl=nl,
        )
    n = sensor
    m_ext = plant.n_out + s
    if n.m != m_ext:
        raise DimensionChainBroken(f"y~~ = u_n: sensor expects {n.m} inputs, plant provides {m_ext}")
    if scl is None:
        scl = Scaler.identity(m_ext, n.l)
    if scl.m != m_ext:
        raise DimensionChainBroken(f"scaler has {scl.m} input gains, sensor input has {m_ext}")
    Si = scl.Sigma_i
    so = np.diag(np.broadcast_to(scl.sigma_o, (n.l,)))
    to = np.broadcast_to(scl.theta_o, (n.l,))
    Cx = Si @ plant.C_ext      # scaled sensor input from plant state
    Dx = Si @ plant.D_ext      # ... and from p_c
    nn, hc, hn, l_out = n.n, c.h, n.h, plant.n_out
    nh = len(Ch)
    A = np.block([
        [c.A, Z((nc, t)), Z((nc, nn))],
        [Z((t, nc)), plant.A, Z((t, nn))],
        [Z((nn, nc)), n.Bu @ Cx, n.A],
    ])
    Bp = np.block([
        [c.Bp, Z((nc, hn))],
        [plant.B, Z((t, hn))],
        [n.Bu @ Dx, n.Bp],
    ])
    Bu = np.vstack([c.Bu, Z((t, c.m)), Z((nn, c.m))])
    beta_x = np.concatenate([np.zeros(nc + t), n.beta_x + n.Bu @ scl.theta_i])
    Cq = np.block([
        [c.Cq, Z((hc, t)), Z((hc, nn))],
        [Z((hn, nc)), n.Dqu @ Cx, n.Cq],
    ])
    Dqp = np.block([[c.Dqp, Z((hc, hn))], [n.Dqu @ Dx, n.Dqp]])
    Dqu = np.vstack([c.Dqu, Z((hn, c.m))])
    beta_q = np.concatenate([np.zeros(hc), n.beta_q + n.Dqu @ scl.theta_i])
    Cy = np.block([
        [Z((l_out, nc)), Cm, Z((l_out, nn))],
        [Z((n.l, nc)), so @ n.Dyu @ Cx, so @ n.Cy],
        [Z((nh, nc)), Ch, Z((nh, nn))],
    ])
    Dyp = np.block([
        [Dm, Z((l_out, hn))],
        [so @ n.Dyu @ Dx, so @ n.Dyp],
        [Dh, Z((nh, hn))],
    ])
    beta_o = np.concatenate([np.zeros(l_out), so @ (n.beta_o + n.Dyu @ scl.theta_i) + to, np.zeros(nh)])
    return Snof(A=A, Bp=Bp, Bu=Bu, Cq=Cq, Dqp=Dqp, Dqu=Dqu, Cy=Cy, Dyp=Dyp,
                Dyu=Z((Cy.shape[0], c.m)), beta_x=beta_x, beta_q=beta_q, beta_o=beta_o,
                nl=c.nl + n.nl)


def _selection(names: Sequence[str], picks: Sequence[str]) -> np.ndarray:
    S = np.zeros((len(picks), len(names)))
    for i, p in enumerate(picks):
        if p not in names:
            raise DimensionChainBroken(f"feedback signal {p!r} is not an output; available: {list(names)}")
        S[i, names.index(p)] = 1.0
    return S


def assemble_closed_loop(plant: PlantLti, ctrl: PiControllerSnof, sensor: Snof | None = None,
                         scl: Scaler | None = None, wiring=None, delay: int = 1,
                         sensor_names: Sequence[str] | None = None) -> ClosedLoopSnof:
    """Close the interconnection with output feedback selected by name.

    ``wiring`` is a list of output names (or ``{"feedback": [...]}``) feeding the
    controller in order; defaults to the measured outputs followed by the sensor outputs.
    """
    op = assemble_open_loop(plant, ctrl, sensor, scl)
    if sensor is None:
        sensor_names = ()
    elif sensor_names is None:
        sensor_names = [f"n{i + 1}" for i in range(sensor.l)]
    names = tuple(plant.output_names) + tuple(sensor_names or ()) + tuple(plant.hidden_names)
    if isinstance(wiring, dict):
        wiring = wiring.get("feedback")
    if wiring is None:
        wiring = list(plant.output_names) + list(sensor_names or ())
    wiring = tuple(wiring)
    if len(wiring) != ctrl.n_in:
        raise DimensionChainBroken(f"controller takes {ctrl.n_in} inputs, wiring selects {len(wiring)}")
    S = _selection(names, wiring)
    nc, t = ctrl.snof.n, plant.t
    nn = 0 if sensor is None else sensor.n
    v = len(wiring)
    Bu_c, Dqu_c = op.Bu, op.Dqu
    if delay == 1:
        # register z_{k+1} = S y_k appended to the state; u_c = r - z
        A = np.block([[op.A, -Bu_c], [S @ op.Cy, np.zeros((v, v))]])
        Bp = np.vstack([op.Bp, S @ op.Dyp])
        beta_x = np.concatenate([op.beta_x, S @ op.beta_o])
        Cq = np.hstack([op.Cq, -Dqu_c])
        Dqp = op.Dqp
        Cy = np.hstack([op.Cy, np.zeros((op.l, v))])
        Dyp = op.Dyp
        beta_q = op.beta_q
        sizes = [("c", nc), ("p", t), ("n", nn), ("z", v)]
    elif delay == 0:
        A = op.A - Bu_c @ S @ op.Cy
        Bp = op.Bp - Bu_c @ S @ op.Dyp
        beta_x = op.beta_x - Bu_c @ S @ op.beta_o
        Cq = op.Cq - Dqu_c @ S @ op.Cy
        Dqp = op.Dqp - Dqu_c @ S @ op.Dyp
        beta_q = op.beta_q - Dqu_c @ S @ op.beta_o
        Cy, Dyp = op.Cy, op.Dyp
        sizes = [("c", nc), ("p", t), ("n", nn)]
    else:
        raise ValueError("delay must be 0 or 1")
    n_tot = A.shape[0]
    closed = Snof(A=A, Bp=Bp, Bu=np.vstack([Bu_c, np.zeros((n_tot - op.n, v))]), Cq=Cq, Dqp=Dqp,
                  Dqu=Dqu_c, Cy=Cy, Dyp=Dyp, Dyu=np.zeros((op.l, v)), beta_x=beta_x,
                  beta_q=beta_q, beta_o=op.beta_o, nl=op.nl)
    hc = ctrl.s
    hn = 0 if sensor is None else sensor.h
    return ClosedLoopSnof(closed, op, plant, ctrl, sensor, scl, wiring, delay,
                          _slices(sizes), _slices([("c", hc), ("n", hn)]), names, S)


# ---------------------------------------------------------------- loop manifest

@dataclass
class LoopManifest:
    plant: PlantLti
    controller: PiControllerSnof
    sensor: Snof | None
    scaler: Scaler | None
    feedback: list
    sensor_names: list
    setpoint: np.ndarray
    schedule: list            # [(time index, setpoint vector), ...]
    delay: int = 1
    raw: dict = field(default_factory=dict)
    path: Path | None = None
    feedback_plain: list | None = None     # feedback names when the sensor is left out
    schedule_plain: list | None = None
    horizon: int = 100
    step_index: int = 0

    def assemble(self, sensor: bool = True, feedback=None) -> ClosedLoopSnof:
        use = self.sensor if sensor else None
        if feedback is None:
            feedback = self.feedback if sensor else (self.feedback_plain or self.feedback)
        return assemble_closed_loop(self.plant, self.controller, use, self.scaler if sensor else None,
                                    feedback, self.delay, self.sensor_names if sensor else None)

    def schedule_for(self, sensor: bool = True) -> list:
        if sensor or not self.schedule_plain:
            return self.schedule or [(0, self.setpoint)]
        return self.schedule_plain


def load_loop_manifest(path) -> LoopManifest:
    """Read a loop manifest; artifact paths are relative to the manifest file."""
    path = Path(path)
    raw = json.loads(path.read_text())
    if not isinstance(raw, dict) or "plant" not in raw or "controller" not in raw:
        raise ValueError(f"{path} is not a loop manifest (needs 'plant' and 'controller')")
    base = path.parent

    def load(key):
        ref = raw.get(key)
        if ref is None:
            return None
        return json.loads((base / ref).read_text()) if isinstance(ref, str) else ref

    def sched(key):
        return [(int(k), np.asarray(r, dtype=float)) for k, r in raw.get(key, [])]

    plant = PlantLti.from_dict(load("plant"))
    ctrl = PiControllerSnof.from_dict(load("controller"))
    sd = load("sensor")
    sensor = Snof.from_dict(sd) if sd is not None else None
    sc = load("scaler")
    scaler = Scaler.from_dict(sc) if sc is not None else None
    wiring = raw.get("wiring", {})
    setpoint = np.asarray(raw.get("setpoint", np.zeros(ctrl.n_in)), dtype=float)
    sim = raw.get("simulation", {})
    return LoopManifest(plant, ctrl, sensor, scaler, list(wiring.get("feedback", [])) or None,
                        list(wiring.get("sensor_names", [])) or None, setpoint, sched("schedule"),
                        int(raw.get("delay", 1)), raw, path,
                        list(wiring.get("feedback_without_sensor", [])) or None,
                        sched("schedule_without_sensor") or None,
                        int(sim.get("horizon", 100)), int(sim.get("step_index", 0)))
