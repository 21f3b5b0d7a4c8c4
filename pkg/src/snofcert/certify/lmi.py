"""Affine matrix pencil whose negativity certifies a decreasing Lur'e-Postnikov function.

Lyapunov candidate, with ``xt = [x; p; q]``::

    V = xt' P xt + 2 sum_i Q_i int_0^{q_i} phi_i + 2 sum_i Qt_i int_0^{q_i} (xi_i s - phi_i) ds

Trajectory vector ``z = [x_k; p_k; p_{k+1}]``. With ``q_k`` and ``q_{k+1}``
written affinely in ``z`` and every integral difference replaced by its
slope-restricted upper bound, ``V_{k+1} - V_k <= z' G z`` for every
admissible assignment of the variables, where ``G`` collects:

* ``E1' P E1 - E0' P E0`` (quadratic part),
* ``Q_i  [He(d (b - a)') - (d - c)(d - c)'/mu]``,
* ``Qt_i [xi (b b' - a a') - He(c (b - a)') - (d - c)(d - c)'/mu]``,
* ``T_i  [xi He(c a') - 2 c c']`` and ``Tt_i [xi He(d b') - 2 d d']`` (sector at k and k+1),
* ``N_i  [mu He((d - c)(b - a)') - 2 (d - c)(d - c)']`` (incremental slope),

with ``a, b`` the rows producing ``q_k, q_{k+1}`` and ``c, d`` the selectors of
``p_k, p_{k+1}``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UnsupportedChannel
from ..snof import Snof
from .equilibrium import EquilibriumShift

DIAG_VARS = ("Q", "Qt", "T", "Tt", "N")


def svec_index(N: int):
    """Lower-triangle, column-major (row, col) pairs in the order of a symmetric-cone vector."""
    return [(i, j) for j in range(N) for i in range(j, N)]


def svec(M: np.ndarray) -> np.ndarray:
    """Symmetric-cone vectorization with sqrt(2) scaling of off-diagonal entries."""
    N = M.shape[0]
    idx = svec_index(N)
    r = np.array([i for i, _ in idx])
    c = np.array([j for _, j in idx])
    return M[r, c] * np.where(r == c, 1.0, np.sqrt(2.0))


def smat(v: np.ndarray, N: int) -> np.ndarray:
    M = np.zeros((N, N))
    for k, (i, j) in enumerate(svec_index(N)):
        val = v[k] if i == j else v[k] / np.sqrt(2.0)
        M[i, j] = M[j, i] = val
    return M


def _He(M):
    return M + M.T


@dataclass(frozen=True, eq=False)
class Pencil:
    """``G(v) = sum_j v_j F[j]`` plus the layout of ``v``.

    ``P`` occupies the first ``N(N+1)/2`` entries in svec coordinates (so
    ``P = smat(v[:nP])``), followed by ``h`` entries for each of Q, Qt, T, Tt, N.
    """

    F: np.ndarray              # (nvar, nz, nz)
    n: int
    h: int
    layout: dict               # name -> slice into v

    @property
    def nz(self) -> int:
        return self.F.shape[1]

    @property
    def nP(self) -> int:
        return self.n + 2 * self.h

    @property
    def nvar(self) -> int:
        return self.F.shape[0]

    def G(self, v) -> np.ndarray:
        return np.tensordot(np.asarray(v, dtype=float), self.F, axes=1)

    def unpack(self, v) -> dict:
        v = np.asarray(v, dtype=float)
        out = {"P": smat(v[self.layout["P"]], self.nP)}
        for k in DIAG_VARS:
            out[k] = v[self.layout[k]].copy()
        return out

    def pack(self, P, **diag) -> np.ndarray:
        v = np.zeros(self.nvar)
        v[self.layout["P"]] = svec(np.asarray(P, dtype=float))
        for k in DIAG_VARS:
            if k in diag:
                v[self.layout[k]] = diag[k]
        return v

    def report(self) -> dict:
        nnz = [int(np.count_nonzero(self.F[j])) for j in range(self.nvar)]
        return {"nz": self.nz, "n": self.n, "h": self.h, "nP": self.nP, "nvar": self.nvar,
                "layout": {k: [s.start, s.stop] for k, s in self.layout.items()},
                "nonzeros_per_variable": nnz}


def trajectory_maps(s: Snof):
    """``E0, E1`` with ``xt_k = E0 z`` and ``xt_{k+1} = E1 z``, and the rows for ``q_k, q_{k+1}``."""
    n, h = s.n, s.h
    I_n, I_h = np.eye(n), np.eye(h)
    Z = np.zeros
    Qk = np.hstack([s.Cq, s.Dqp, Z((h, h))])
    Qk1 = np.hstack([s.Cq @ s.A, s.Cq @ s.Bp, s.Dqp])
    E0 = np.vstack([np.hstack([I_n, Z((n, 2 * h))]), np.hstack([Z((h, n)), I_h, Z((h, h))]), Qk])
    E1 = np.vstack([np.hstack([s.A, s.Bp, Z((n, h))]), np.hstack([Z((h, n + h)), I_h]), Qk1])
    return E0, E1, Qk, Qk1


def build_lmi(shifted) -> Pencil:
    s: Snof = shifted.shifted if isinstance(shifted, EquilibriumShift) else shifted
    n, h = s.n, s.h
    for i, ch in enumerate(s.nl.channels):
        if not ch.certifiable:
            raise UnsupportedChannel(f"channel {i} ({ch.kind}) has no sector/slope bound through the origin")
        if ch.mu <= 0 or ch.xi <= 0:
            raise UnsupportedChannel(f"channel {i} needs positive sector and slope bounds")
    xi, mu = s.nl.xi, s.nl.mu
    nz = n + 2 * h
    nP = n + 2 * h
    E0, E1, Qk, Qk1 = trajectory_maps(s)
    idx = svec_index(nP)
    nsv = len(idx)
    F = np.zeros((nsv + 5 * h, nz, nz))
    for k, (i, j) in enumerate(idx):
        # basis of P in svec coordinates: P = sum v_k B_k
        if i == j:
            F[k] = np.outer(E1[i], E1[i]) - np.outer(E0[i], E0[i])
        else:
            w = 1.0 / np.sqrt(2.0)
            F[k] = w * (_He(np.outer(E1[i], E1[j])) - _He(np.outer(E0[i], E0[j])))
    layout = {"P": slice(0, nsv)}
    for t, name in enumerate(DIAG_VARS):
        layout[name] = slice(nsv + t * h, nsv + (t + 1) * h)
    for i in range(h):
        a, b = Qk[i], Qk1[i]
        c = np.zeros(nz)
        c[n + i] = 1.0
        d = np.zeros(nz)
        d[n + h + i] = 1.0
        dc, ba = d - c, b - a
        DC = np.outer(dc, dc)
        F[layout["Q"].start + i] = _He(np.outer(d, ba)) - DC / mu[i]
        F[layout["Qt"].start + i] = xi[i] * (np.outer(b, b) - np.outer(a, a)) - _He(np.outer(c, ba)) - DC / mu[i]
        F[layout["T"].start + i] = xi[i] * _He(np.outer(c, a)) - 2.0 * np.outer(c, c)
        F[layout["Tt"].start + i] = xi[i] * _He(np.outer(d, b)) - 2.0 * np.outer(d, d)
        F[layout["N"].start + i] = mu[i] * _He(np.outer(dc, ba)) - 2.0 * DC
    return Pencil(F, n, h, layout)


def neutral_directions(pencil: Pencil, shifted, tol: float = 1e-10) -> list:
    """Unit-eigenvalue state directions on which every pencil term vanishes.

    For ``z = [e; 0; 0]`` with ``A e = +-e`` the quadratic part of ``z' G z`` is
    zero for every ``P``; if the multiplier terms vanish as well then
    ``z' G(v) z = 0`` for all ``v`` and no assignment can make ``G`` negative
    definite. Returns the offending eigenvectors (empty when there are none).
    """
    s: Snof = shifted.shifted if isinstance(shifted, EquilibriumShift) else shifted
    if s.n == 0:
        return []
    w, V = np.linalg.eig(s.A)
    scale = max(1.0, float(np.max(np.abs(pencil.F))))
    out = []
    for lam, e in zip(w, V.T):
        if abs(lam.imag) > tol or abs(abs(lam.real) - 1.0) > tol:
            continue
        e = np.real(e) / np.linalg.norm(np.real(e))
        z = np.zeros(pencil.nz)
        z[:s.n] = e
        forms = np.einsum("i,jik,k->j", z, pencil.F, z)
        if np.max(np.abs(forms)) <= tol * scale:
            out.append(e)
    return out
