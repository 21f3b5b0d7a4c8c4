"""Closed-loop rollouts and step-response metrics."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceDetected
from .plant_loop import ClosedLoopSnof, LoopManifest
from .snof import Snof, eval_step

DIVERGENCE_LIMIT = 1e9


@dataclass
class SimTrace:
    t: np.ndarray          # (K,) sample times
    x: np.ndarray          # (K + 1, n)
    r: np.ndarray          # (K, m) reference / input
    y: np.ndarray          # (K, l)
    p: np.ndarray          # (K, h)
    q: np.ndarray          # (K, h)
    output_names: tuple = ()
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    def output(self, name_or_index) -> np.ndarray:
        i = name_or_index if isinstance(name_or_index, int) else self.output_names.index(name_or_index)
        return self.y[:, i]

    def to_csv(self, path) -> None:
        names = list(self.output_names) or [f"y{i}" for i in range(self.y.shape[1])]
        header = (["t"] + [f"r{i}" for i in range(self.r.shape[1])] + names
                  + [f"x{i}" for i in range(self.x.shape[1])] + [f"p{i}" for i in range(self.p.shape[1])])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self)):
                w.writerow([repr(float(v)) for v in
                            np.concatenate([[self.t[k]], self.r[k], self.y[k], self.x[k], self.p[k]])])


def reference_signal(schedule, horizon: int, m: int) -> np.ndarray:
    """Piecewise-constant reference from ``[(k, r), ...]``, or pass an array through."""
    if isinstance(schedule, np.ndarray) and schedule.ndim == 2:
        if schedule.shape != (horizon, m):
            raise ValueError(f"reference array must be {horizon}x{m}")
        return schedule.astype(float)
    R = np.zeros((horizon, m))
    if schedule is None:
        return R
    if not isinstance(schedule, (list, tuple)) or (len(schedule) and np.isscalar(schedule[0])):
        R[:] = np.broadcast_to(np.asarray(schedule, dtype=float), (m,))
        return R
    for k, r in sorted(schedule, key=lambda e: e[0]):
        R[int(k):] = np.broadcast_to(np.asarray(r, dtype=float), (m,))
    return R


def simulate(cl, schedule=None, horizon: int = 100, x0=None, Ts: float | None = None) -> SimTrace:
    """Roll the loop forward ``horizon`` samples under the reference schedule."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    s: Snof = cl.snof if isinstance(cl, ClosedLoopSnof) else cl
    names = cl.output_names if isinstance(cl, ClosedLoopSnof) else ()
    if Ts is None:
        Ts = getattr(getattr(cl, "plant", None), "Ts", None) or 1.0
    R = reference_signal(schedule, horizon, s.m)
    x = np.zeros(s.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    X = np.empty((horizon + 1, s.n))
    Y = np.empty((horizon, s.l))
    P = np.empty((horizon, s.h))
    Q = np.empty((horizon, s.h))
    X[0] = x
    for k in range(horizon):
        st = eval_step(s, x, R[k])
        x = st.x_next
        if not np.all(np.isfinite(x)) or np.max(np.abs(x), initial=0.0) > DIVERGENCE_LIMIT:
            raise DivergenceDetected(f"state left the bounded region at step {k + 1}", k + 1)
        X[k + 1], Y[k], P[k], Q[k] = x, st.y, st.p, st.q
    return SimTrace(np.arange(horizon) * Ts, X, R, Y, P, Q, tuple(names),
                    {"horizon": horizon, "Ts": Ts})


def steady_state(cl, setpoint) -> np.ndarray:
    """Closed-loop equilibrium under a constant reference, used as a settled start."""
    from .certify.equilibrium import find_equilibrium

    s: Snof = cl.snof if isinstance(cl, ClosedLoopSnof) else cl
    r = np.broadcast_to(np.asarray(setpoint, dtype=float), (s.m,))
    return find_equilibrium(s, r)[0]


@dataclass
class StepMetrics:
    rmse: float
    iae: float
    settling_time: float | None     # None when the band is never held
    overshoot: float                # percent of the step magnitude
    ss_error: float                 # signed: mean of the last 5% minus the setpoint
    settled: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def step_metrics(y, k0: int, r_before: float, r_after: float, Ts: float = 1.0, band: float = 0.02,
                 k_end: int | None = None) -> StepMetrics:
    """Metrics of ``y`` over the window ``[k0, k_end)`` after a setpoint step at ``k0``.

    ``y[k0]`` is the first sample after the step and still the pre-step
    response; settling is the number of samples until ``y`` enters and stays in
    the band, so a response that jumps to the setpoint one sample later settles
    in one sample. With no step (``r_before == r_after``) the band and the
    overshoot are taken relative to ``max(|r_after|, 1)``.
    """
    y = np.asarray(y, dtype=float)
    w = y[k0:k_end]
    e = w - r_after
    mag = r_after - r_before
    scale = abs(mag) if mag != 0 else max(abs(r_after), 1.0)
    direction = np.sign(mag) if mag != 0 else 1.0
    rmse = float(np.sqrt(np.mean(e ** 2)))
    iae = float(np.sum(np.abs(e)) * Ts)
    overshoot = float(max(0.0, np.max(direction * e)) / scale * 100.0) if mag != 0 else 0.0
    outside = np.nonzero(np.abs(e) > band * scale)[0]
    if outside.size and outside[-1] == len(e) - 1:
        settling, settled = None, False
    else:
        settling, settled = (float((outside[-1] + 1) * Ts) if outside.size else 0.0), True
    tail = max(1, int(np.ceil(0.05 * len(e))))
    ss = float(np.mean(w[-tail:]) - r_after)
    return StepMetrics(rmse, iae, settling, overshoot, ss, settled)


def trace_metrics(trace: SimTrace, k0: int, outputs=None, band: float = 0.02, k_end=None, reference_index=None) -> dict:
    """Step metrics per named output; reference channel ``i`` pairs with ``outputs[i]``."""
    outputs = list(outputs or trace.output_names)
    Ts = trace.config.get("Ts", 1.0)
    out = {}
    for i, name in enumerate(outputs):
        j = i if reference_index is None else reference_index[i]
        rb = trace.r[k0 - 1, j] if k0 > 0 else trace.r[0, j]
        out[name] = step_metrics(trace.output(name), k0, rb, trace.r[k0, j], Ts, band, k_end)
    return out


def compare_configs(trace_a: SimTrace, trace_b: SimTrace, k0: int, outputs_a, outputs_b=None,
                    band: float = 0.02, k_end=None) -> dict:
    """Paired step metrics of two loops under the same schedule, with B - A deltas."""
    outputs_b = outputs_b or outputs_a
    ma = trace_metrics(trace_a, k0, outputs_a, band, k_end)
    mb = trace_metrics(trace_b, k0, outputs_b, band, k_end)
    report = {}
    for na, nb in zip(outputs_a, outputs_b):
        a, b = ma[na].to_dict(), mb[nb].to_dict()
        delta = {k: (None if a[k] is None or b[k] is None else float(b[k] - a[k]))
                 for k in ("rmse", "iae", "settling_time", "overshoot", "ss_error")}
        report[na] = {"A": a, "B": b, "delta": delta}
    return report


def write_comparison_csv(trace_a: SimTrace, trace_b: SimTrace, path, outputs_a, outputs_b=None) -> None:
    """Plot-ready CSV: time, reference, and each paired output of both loops."""
    outputs_b = outputs_b or outputs_a
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"r{i}" for i in range(trace_a.r.shape[1])]
                   + [f"A_{n}" for n in outputs_a] + [f"B_{n}" for n in outputs_b])
        for k in range(len(trace_a)):
            row = [trace_a.t[k], *trace_a.r[k]]
            row += [trace_a.output(n)[k] for n in outputs_a] + [trace_b.output(n)[k] for n in outputs_b]
            w.writerow([repr(float(v)) for v in row])


def write_metrics_csv(report: dict, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["output", "metric", "A", "B", "delta"])
        for name, rec in report.items():
            for k in ("rmse", "iae", "settling_time", "overshoot", "ss_error"):
                w.writerow([name, k, rec["A"][k], rec["B"][k], rec["delta"][k]])


def run_comparison(manifest: LoopManifest, band: float = 0.02):
    """Loops without (A) and with (B) the sensor, each started at its own steady state.

    Metrics are taken after ``manifest.step_index``; the sensed output of B is
    paired with the measured output of A it replaces.
    """
    traces = {}
    for tag, sensor in (("A", False), ("B", True)):
        cl = manifest.assemble(sensor)
        sched = manifest.schedule_for(sensor)
        x0 = steady_state(cl, sched[0][1])
        traces[tag] = (cl, simulate(cl, sched, manifest.horizon, x0))
    (cl_a, tr_a), (cl_b, tr_b) = traces["A"], traces["B"]
    report = compare_configs(tr_a, tr_b, manifest.step_index, list(cl_a.feedback), list(cl_b.feedback), band)
    return tr_a, tr_b, report
