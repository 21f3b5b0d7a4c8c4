"""Equilibrium of a frozen-input SNOF and the bias-free shifted system around it."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import NoEquilibrium, NoConvergence, SaturatedEquilibrium
from ..plant_loop import ClosedLoopSnof
from ..snof import Snof, eval_step, solve_loop


@dataclass(frozen=True, eq=False)
class EquilibriumShift:
    x_star: np.ndarray
    p_star: np.ndarray
    q_star: np.ndarray
    y_star: np.ndarray
    u_star: np.ndarray
    shifted: Snof
    residual: float
    saturated: tuple = ()      # indices of channels pinned at a saturation bound
    method: str = "newton"

    def to_dict(self) -> dict:
        return {"x_star": self.x_star.tolist(), "p_star": self.p_star.tolist(),
                "q_star": self.q_star.tolist(), "y_star": self.y_star.tolist(),
                "residual": self.residual, "saturated": list(self.saturated), "method": self.method}


def _affine(s: Snof, u):
    bx = s.beta_x + s.Bu @ u
    bq = s.beta_q + s.Dqu @ u
    return bx, bq


def _residual(s: Snof, x, bx, bq):
    q = solve_loop(s, s.Cq @ x + bq)
    p = s.nl(q)
    return s.A @ x + s.Bp @ p + bx - x, q


def _newton(s: Snof, x, bx, bq, tol=1e-12, iters=100):
    I = np.eye(s.n)
    F, q = _residual(s, x, bx, bq)
    nrm = np.linalg.norm(F, np.inf)
    for _ in range(iters):
        if nrm < tol * max(1.0, np.linalg.norm(x, np.inf)):
            return x, nrm
        D = np.diag(s.nl.slope(q))
        dp = np.linalg.solve(np.eye(s.h) - D @ s.Dqp, D @ s.Cq) if s.h else np.zeros((0, s.n))
        J = s.A + s.Bp @ dp - I
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        t = 1.0
        while t > 1e-8:
            x_new = x + t * step
            F_new, q_new = _residual(s, x_new, bx, bq)
            n_new = np.linalg.norm(F_new, np.inf)
            if n_new < nrm:
                break
            t *= 0.5
        else:
            return x, nrm
        x, F, q, nrm = x_new, F_new, q_new, n_new
    return x, nrm


def _cosim(s: Snof, x, u, max_steps: int, tol: float = 1e-13):
    for k in range(max_steps):
        x_next = eval_step(s, x, u).x_next
        if not np.all(np.isfinite(x_next)):
            return x, False
        if np.linalg.norm(x_next - x, np.inf) <= tol * max(1.0, np.linalg.norm(x, np.inf)):
            return x_next, True
        x = x_next
    return x, False


def find_equilibrium(s: Snof, u=None, x0=None, max_steps: int = 10**6, tol: float = 1e-10):
    """Fixed point of ``x = A x + Bp p + Bu u + beta_x`` with the loop ``p = Gamma(q)``.

    Newton with backtracking first; if it stalls, simulate from the last
    iterate until the state stops moving and polish with Newton again.
    """
    u = np.zeros(s.m) if u is None else np.asarray(u, dtype=float)
    x = np.zeros(s.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    bx, bq = _affine(s, u)
    scale = lambda z: max(1.0, np.linalg.norm(z, np.inf))
    try:
        x, res = _newton(s, x, bx, bq)
        method = "newton"
        if res > tol * scale(x):
            x, ok = _cosim(s, x, u, max_steps)
            x, res = _newton(s, x, bx, bq)
            method = "co-simulation"
    except (NoConvergence, np.linalg.LinAlgError) as e:
        raise NoEquilibrium(f"equilibrium search broke down: {e}") from None
    if not np.isfinite(res) or res > tol * scale(x):
        raise NoEquilibrium(f"no equilibrium found (residual {res:.3e})")
    return x, res, method


def shift_equilibrium(cl, setpoint=None, x0=None, max_steps: int = 10**6) -> EquilibriumShift:
    """Freeze the input at ``setpoint`` and move the equilibrium to the origin.

    The shifted system has zero biases, no input, and channels
    ``phi(s) = Gamma(s + q*) - p*`` that vanish at 0.
    """
    s: Snof = cl.snof if isinstance(cl, ClosedLoopSnof) else cl
    u = np.zeros(s.m) if setpoint is None else np.broadcast_to(np.asarray(setpoint, dtype=float), (s.m,)).copy()
    x, res, method = find_equilibrium(s, u, x0, max_steps)
    st = eval_step(s, x, u)
    q, p = st.q, st.p
    saturated = []
    for i, ch in enumerate(s.nl.channels):
        if ch.kind == "saturation" and (q[i] <= ch.lo or q[i] >= ch.hi):
            saturated.append(i)
    if saturated:
        warnings.warn(f"channels {saturated} sit at a saturation bound at the equilibrium", SaturatedEquilibrium)
    nl = s.nl.shifted(q)
    shifted = Snof(A=s.A, Bp=s.Bp, Bu=np.zeros((s.n, 0)), Cq=s.Cq, Dqp=s.Dqp, Dqu=np.zeros((s.h, 0)),
                   Cy=s.Cy, Dyp=s.Dyp, Dyu=np.zeros((s.l, 0)), nl=nl)
    res = float(np.linalg.norm(st.x_next - x, np.inf))
    return EquilibriumShift(x, p, q, st.y, u, shifted, res, tuple(saturated), method)
