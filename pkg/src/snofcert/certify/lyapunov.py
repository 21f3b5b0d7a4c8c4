"""Numerical Lyapunov function and the falsification harness for certificates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import FalsifiedCertificate
from ..snof import Channel, Snof, eval_batch
from .equilibrium import EquilibriumShift
from .solver import Certificate


def adaptive_simpson(f, a, b, tol: float = 1e-12, max_depth: int = 60, min_depth: int = 2,
                     chunk: int = 2048):
    """Vectorised adaptive Simpson: integrates ``f`` over each ``[a_i, b_i]``.

    ``f(t, owner)`` receives the nodes and the flat index of the integral each
    node belongs to. All pending subintervals of a chunk are refined together;
    an interval is accepted when the Richardson estimate ``|S_left + S_right - S| / 15``
    is below its share of the tolerance at two consecutive levels, since near
    a zero of the fourth derivative a single level can pass by accident.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.broadcast_to(np.asarray(b, dtype=float), a.shape)
    lo_all, hi_all = a.ravel(), b.ravel()
    out = np.zeros(lo_all.size)
    for start in range(0, lo_all.size, chunk):
        idx = np.arange(start, min(start + chunk, lo_all.size))
        out[idx] = _simpson_chunk(f, lo_all[idx], hi_all[idx], idx, tol, max_depth, min_depth)
    return out.reshape(a.shape)


def _simpson_chunk(f, lo, hi, ids, tol, max_depth, min_depth):
    total = np.zeros(lo.size)
    owner = np.arange(lo.size)
    flo, fhi = f(lo, ids), f(hi, ids)
    mid = 0.5 * (lo + hi)
    fmid = f(mid, ids)
    whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)
    eps = np.full(lo.shape, tol)
    parent_ok = np.zeros(lo.shape, dtype=bool)
    for depth in range(max_depth + 1):
        if lo.size == 0:
            break
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm, ids[owner]), f(rm, ids[owner])
        left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi)
        err = left + right - whole
        ok = np.abs(err) <= 15.0 * eps
        done = (ok & parent_ok & (depth >= min_depth)) | (depth == max_depth)
        np.add.at(total, owner[done], (left + right + err / 15.0)[done])
        keep = ~done
        # split the rest into left and right halves
        owner = np.concatenate([owner[keep], owner[keep]])
        lo, mid, hi = (np.concatenate([lo[keep], mid[keep]]), np.concatenate([lm[keep], rm[keep]]),
                       np.concatenate([mid[keep], hi[keep]]))
        flo, fmid, fhi = (np.concatenate([flo[keep], fmid[keep]]), np.concatenate([flm[keep], frm[keep]]),
                          np.concatenate([fmid[keep], fhi[keep]]))
        whole = np.concatenate([left[keep], right[keep]])
        eps = np.concatenate([eps[keep], eps[keep]]) / 2.0
        parent_ok = np.concatenate([ok[keep], ok[keep]])
    return total


def channel_integral(ch: Channel, q, tol: float = 1e-12) -> np.ndarray:
    """``int_0^q phi(s) ds`` elementwise."""
    q = np.asarray(q, dtype=float)
    return adaptive_simpson(lambda s, _: ch(s), np.zeros(q.shape), q, tol)


def integral_bounds(ch: Channel, a, b):
    """Slope-restricted bounds on ``int_a^b phi``.

    ``phi(a)(b - a) + dphi^2 / (2 mu) <= int_a^b phi <= phi(b)(b - a) - dphi^2 / (2 mu)``
    for non-decreasing ``phi`` with slope at most ``mu``, in either order of ``a, b``.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    fa, fb = ch(a), ch(b)
    curv = (fb - fa) ** 2 / (2.0 * ch.mu)
    return fa * (b - a) + curv, fb * (b - a) - curv


@dataclass
class LyapunovEvaluator:
    system: Snof
    cert: Certificate
    tol: float = 1e-12

    def __post_init__(self):
        if self.cert.variables is None:
            raise ValueError("certificate carries no variables")
        v = self.cert.variables
        self.P = np.asarray(v["P"])
        self.Q, self.Qt = np.asarray(v["Q"]), np.asarray(v["Qt"])
        self.xi = self.system.nl.xi

    def integrals(self, Qv) -> np.ndarray:
        """``int_0^{q_i} phi_i`` for a batch ``Qv`` of shape (B, h)."""
        Qv = np.atleast_2d(Qv)
        out = np.empty_like(Qv)
        for i, ch in enumerate(self.system.nl.channels):
            out[:, i] = channel_integral(ch, Qv[:, i], self.tol)
        return out

    def from_signals(self, X, Pv, Qv) -> np.ndarray:
        X, Pv, Qv = np.atleast_2d(X), np.atleast_2d(Pv), np.atleast_2d(Qv)
        xt = np.hstack([X, Pv, Qv])
        quad = np.einsum("bi,ij,bj->b", xt, self.P, xt)
        if Qv.shape[1] == 0:
            return quad
        I1 = self.integrals(Qv)
        I2 = 0.5 * self.xi * Qv ** 2 - I1
        return quad + 2.0 * (I1 @ self.Q) + 2.0 * (I2 @ self.Qt)

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        st = eval_batch(self.system, X)
        return self.from_signals(X, st.p, st.q)


@dataclass
class ValidationReport:
    trials: int
    converged: int
    max_steps_used: int
    worst_increase: float          # max over trials of (V_{k+1} - V_k) / V_0
    magnitudes: tuple

    def to_dict(self) -> dict:
        return dict(self.__dict__, magnitudes=list(self.magnitudes))


def initial_states(n: int, trials: int, seed: int, magnitudes) -> np.ndarray:
    """Independent stream per trial (seed, trial index); direction uniform on the sphere."""
    X = np.zeros((trials, n))
    for i in range(trials):
        rng = np.random.default_rng([seed, i])
        d = rng.standard_normal(n)
        X[i] = magnitudes[i % len(magnitudes)] * d / max(np.linalg.norm(d), 1e-300)
    return X


def _trajectory(s: Snof, x0, steps: int) -> np.ndarray:
    X = [np.asarray(x0, dtype=float)]
    for _ in range(steps):
        X.append(eval_batch(s, X[-1][None]).x_next[0])
    return np.array(X)


def validate_certificate(shifted, cert: Certificate, trials: int = 1000, seed: int = 0,
                         magnitudes=(0.1, 1.0, 10.0, 100.0), max_steps: int = 10_000,
                         tol: float = 1e-6, rel_tol: float = 1e-9, X0=None) -> ValidationReport:
    """Simulate the shifted loop from random states; the certificate is falsified if a
    trajectory fails to reach ``|x| < tol`` within ``max_steps`` or ``V`` increases by
    more than ``rel_tol * V_0`` in one step."""
    s: Snof = shifted.shifted if isinstance(shifted, EquilibriumShift) else shifted
    if not cert.feasible:
        raise ValueError("only feasible certificates can be validated")
    V = LyapunovEvaluator(s, cert)
    X = initial_states(s.n, trials, seed, magnitudes) if X0 is None else np.array(X0, dtype=float, ndmin=2)
    X_init = X.copy()
    trials = len(X)
    V0 = V(X)
    if np.any(V0 < -rel_tol * np.abs(V0).max(initial=1.0)):
        i = int(np.argmin(V0))
        raise FalsifiedCertificate(f"V is negative at trial {i}", X[i:i + 1], V0[i:i + 1])
    Vprev = V0.copy()
    active = np.nonzero(np.max(np.abs(X), axis=1) >= tol)[0]
    worst = 0.0
    steps = 0
    for k in range(max_steps):
        if active.size == 0:
            break
        steps = k + 1
        st = eval_batch(s, X[active])
        Xn = st.x_next
        Vn = V(Xn)
        inc = (Vn - Vprev[active]) / np.where(V0[active] > 0, V0[active], 1.0)
        worst = max(worst, float(inc.max()))
        bad = np.nonzero(inc > rel_tol)[0]
        if bad.size:
            i = int(active[bad[0]])
            traj = _trajectory(s, X_init[i], k + 1)
            raise FalsifiedCertificate(f"V increased at step {k + 1} of trial {i} by {inc[bad[0]]:.3e} V0",
                                       traj, V(traj))
        X[active] = Xn
        Vprev[active] = Vn
        active = active[np.max(np.abs(Xn), axis=1) >= tol]
    if active.size:
        i = int(active[0])
        raise FalsifiedCertificate(f"{active.size} trajectories did not reach |x| < {tol} within {max_steps} steps",
                                   X[i:i + 1], Vprev[i:i + 1])
    return ValidationReport(trials, trials, steps, worst, tuple(magnitudes))
