"""Numerical test for whether a channel nonlinearity admits a scalar potential.

A vector field ``F`` is a gradient field only if its Jacobian is symmetric;
otherwise line integrals of ``F`` depend on the path and the integral terms of
a Lur'e-Postnikov Lyapunov function are not well defined.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..snof import _sigmoid as sigmoid

Field = Callable[[np.ndarray], np.ndarray]


@dataclass
class GatingAnalysis:
    probes: np.ndarray
    asymmetry: np.ndarray
    path_discrepancy: np.ndarray

    @property
    def max_asymmetry(self) -> float:
        return float(np.max(self.asymmetry)) if self.asymmetry.size else 0.0

    def to_dict(self) -> dict:
        return {"probes": self.probes.tolist(), "asymmetry": self.asymmetry.tolist(),
                "path_discrepancy": self.path_discrepancy.tolist()}


def componentwise_field(fn: Callable = np.tanh) -> Field:
    return lambda v: fn(np.asarray(v, dtype=float))


def hadamard_field() -> Field:
    """``F(u, v) = (sigma(u), sigma(u) * v)``: a gate and the gated signal."""
    def F(w):
        u, v = np.asarray(w, dtype=float)
        return np.array([sigmoid(u), sigmoid(u) * v])
    return F


FIELDS = {"tanh": componentwise_field, "hadamard": hadamard_field}


def jacobian(field: Field, x, step: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        J[:, j] = (field(x + e) - field(x - e)) / (2 * step)
    return J


def _leg_integral(field: Field, start, axis: int, length: float, segments: int) -> float:
    # composite Simpson along one coordinate axis
    if length == 0.0:
        return 0.0
    t = np.linspace(0.0, length, 2 * segments + 1)
    vals = np.empty_like(t)
    for k, tk in enumerate(t):
        pt = np.array(start, dtype=float)
        pt[axis] += tk
        vals[k] = field(pt)[axis]
    w = np.ones_like(t)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((length / (6 * segments)) * np.dot(w, vals))


def staircase_integral(field: Field, target, order: Sequence[int], segments: int = 10_000) -> float:
    """Line integral of ``field`` from the origin to ``target`` along axis-parallel legs."""
    target = np.asarray(target, dtype=float)
    pos = np.zeros_like(target)
    total = 0.0
    for axis in order:
        total += _leg_integral(field, pos, axis, target[axis], segments)
        pos[axis] = target[axis]
    return total


def analyze_gating(field: Field, probes, step: float = 1e-5, segments: int = 10_000) -> GatingAnalysis:
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    asym, disc = [], []
    for pt in probes:
        J = jacobian(field, pt, step)
        asym.append(float(np.max(np.abs(J - J.T))))
        n = pt.size
        fwd = staircase_integral(field, pt, range(n), segments)
        bwd = staircase_integral(field, pt, range(n - 1, -1, -1), segments)
        disc.append(abs(fwd - bwd))
    return GatingAnalysis(probes, np.array(asym), np.array(disc))
