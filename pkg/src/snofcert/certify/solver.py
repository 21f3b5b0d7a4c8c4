"""Conic feasibility port and the SCS adapter.

Problems are stated in the standard form ``A v + s = b``, ``s`` in a product of
a nonnegative orthant and PSD cones (svec coordinates), objective ``c' v``.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import SolverFailure
from .lmi import DIAG_VARS, Pencil, svec, svec_index

log = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    eps_abs: float = 1e-5
    eps_rel: float = 1e-5
    max_iters: int = 100_000
    margin: float = 1e-6       # a-posteriori requirement lambda_max(G) <= -margin
    strict: bool = True        # False drops the normalisation G <= -I to G <= 0 (diagnostic only)
    verbose: bool = False


@dataclass
class ConicProblem:
    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    l: int                     # orthant rows (first)
    s: list                    # PSD cone sizes, in order after the orthant


@dataclass
class ConicResult:
    status: str                # "solved", "infeasible", or a failure status
    v: np.ndarray | None
    info: dict = field(default_factory=dict)


class ConicSolver(ABC):
    name = "abstract"

    @abstractmethod
    def solve(self, prob: ConicProblem, opts: SolverOptions) -> ConicResult:
        ...


class ScsSolver(ConicSolver):
    name = "scs"

    def solve(self, prob: ConicProblem, opts: SolverOptions) -> ConicResult:
        import scs

        data = {"A": prob.A, "b": prob.b, "c": prob.c}
        cone = {"l": prob.l, "s": prob.s}
        solver = scs.SCS(data, cone, eps_abs=opts.eps_abs, eps_rel=opts.eps_rel,
                         max_iters=int(opts.max_iters), verbose=opts.verbose)
        out = solver.solve()
        info = {k: (float(v) if isinstance(v, (int, float, np.floating)) else v)
                for k, v in out["info"].items()}
        raw = info.get("status", "")
        code = int(info.get("status_val", scs.UNFINISHED))
        info["inaccurate"] = code in (scs.SOLVED_INACCURATE, scs.INFEASIBLE_INACCURATE)
        if code in (scs.SOLVED, scs.SOLVED_INACCURATE):
            return ConicResult("solved", np.asarray(out["x"]), info)
        if code in (scs.INFEASIBLE, scs.INFEASIBLE_INACCURATE):
            # the a-posteriori check guards "solved"; an infeasibility claim is
            # reported as such, with the inaccurate flag surfaced in the stats
            return ConicResult("infeasible", None, info)
        return ConicResult(raw or "failed", None, info)


def conic_problem(pencil: Pencil, strict: bool = True) -> ConicProblem:
    """``diag vars >= 0``, ``-G(v) - I >= 0`` (or ``-G >= 0``), ``P >= 0``, ``P11 - I >= 0``.

    ``G`` is homogeneous in ``v`` and the constraint set is a cone, so the unit
    normalisation is equivalent to ``G < 0`` with ``P11 > 0``.
    """
    nv, nz, nP, n = pencil.nvar, pencil.nz, pencil.nP, pencil.n
    diag_cols = np.arange(pencil.layout["Q"].start, nv)
    blocks_A, blocks_b = [], []
    # orthant: -v_j + s = 0
    A_l = sp.csc_matrix((-np.ones(len(diag_cols)), (np.arange(len(diag_cols)), diag_cols)),
                        shape=(len(diag_cols), nv))
    blocks_A.append(A_l)
    blocks_b.append(np.zeros(len(diag_cols)))
    # -G(v) - I in PSD: A[:, j] = svec(F_j), b = -svec(I)
    Fsv = np.stack([svec(pencil.F[j]) for j in range(nv)], axis=1)
    blocks_A.append(sp.csc_matrix(Fsv))
    blocks_b.append(-svec(np.eye(nz)) if strict else np.zeros(Fsv.shape[0]))
    # P in PSD: svec(P) = v[P] directly
    nsv = pencil.layout["P"].stop
    blocks_A.append(sp.hstack([-sp.identity(nsv), sp.csc_matrix((nsv, nv - nsv))]).tocsc())
    blocks_b.append(np.zeros(nsv))
    # P11 - I in PSD: pick the svec entries of P lying in the leading n x n block
    if n:
        pos = {ij: k for k, ij in enumerate(svec_index(nP))}
        sub = svec_index(n)
        rows = np.arange(len(sub))
        cols = np.array([pos[ij] for ij in sub])
        A11 = sp.csc_matrix((-np.ones(len(sub)), (rows, cols)), shape=(len(sub), nv))
        blocks_A.append(A11)
        blocks_b.append(-svec(np.eye(n)))
    A = sp.vstack(blocks_A).tocsc()
    b = np.concatenate(blocks_b)
    cones = [nz, nP] + ([n] if n else [])
    return ConicProblem(A, b, np.zeros(nv), len(diag_cols), cones)


@dataclass
class Certificate:
    verdict: str                       # "feasible" or "infeasible"
    margin: float                      # requested epsilon
    lambda_max: float | None           # lambda_max(G) recomputed from the raw matrices
    variables: dict | None             # P, Q, Qt, T, Tt, N
    solver: dict
    checks: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.verdict == "feasible"

    def to_dict(self) -> dict:
        vars_ = None
        if self.variables is not None:
            vars_ = {k: np.asarray(v).tolist() for k, v in self.variables.items()}
        return {"verdict": self.verdict, "margin": self.margin, "lambda_max_G": self.lambda_max,
                "variables": vars_, "solver": self.solver, "checks": self.checks}


def check_variables(pencil: Pencil, v, margin: float, tol: float = 1e-7) -> dict:
    """Recompute every certificate condition from the raw variable values."""
    vals = pencil.unpack(v)
    G = pencil.G(v)
    lam = float(np.max(np.linalg.eigvalsh(G))) if G.size else -np.inf
    P = vals["P"]
    P11 = P[:pencil.n, :pencil.n]
    p_min = float(np.min(np.linalg.eigvalsh(P))) if P.size else 0.0
    p11_min = float(np.min(np.linalg.eigvalsh(P11))) if P11.size else np.inf
    d_min = min((float(np.min(vals[k])) for k in DIAG_VARS if vals[k].size), default=0.0)
    ok = lam <= -margin + tol and p_min >= -tol and p11_min > 0 and d_min >= -tol
    return {"lambda_max_G": lam, "lambda_min_P": p_min, "lambda_min_P11": p11_min,
            "min_diagonal": d_min, "passed": bool(ok)}


def solve_feasibility(pencil: Pencil, options: SolverOptions | None = None,
                      solver: ConicSolver | None = None) -> Certificate:
    opts = options or SolverOptions()
    for k in ("eps_abs", "eps_rel", "max_iters"):
        if getattr(opts, k) <= 0:
            raise ValueError(f"{k} must be positive")
    solver = solver or ScsSolver()
    res = solver.solve(conic_problem(pencil, opts.strict), opts)
    stats = {"name": solver.name, "status": res.status,
             "iterations": res.info.get("iter"), "res_pri": res.info.get("res_pri"),
             "res_dual": res.info.get("res_dual"), "res_infeas": res.info.get("res_infeas"),
             "solve_time_s": res.info["solve_time"] / 1000.0 if "solve_time" in res.info else None,
             "raw_status": res.info.get("status"),
             "inaccurate": res.info.get("inaccurate"),
             "eps_abs": opts.eps_abs, "eps_rel": opts.eps_rel, "max_iters": opts.max_iters,
             "strict": opts.strict}
    if res.status == "infeasible":
        return Certificate("infeasible", opts.margin, None, None, stats)
    if res.status != "solved":
        raise SolverFailure(f"solver stopped with status {res.status!r}")
    # a-posteriori: the verdict rests on recomputed eigenvalues, not the solver's claim
    margin = opts.margin if opts.strict else 0.0
    checks = check_variables(pencil, res.v, margin)
    lam = checks["lambda_max_G"]
    if not checks["passed"]:
        raise SolverFailure(f"solver reported a solution that fails the a-posteriori check: {checks}")
    return Certificate("feasible", margin, lam, pencil.unpack(res.v), stats, checks)
