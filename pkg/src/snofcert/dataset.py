"""Windowed sequence datasets: run-to-failure CSV ingestion and a synthetic LTI generator."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MalformedRow, ShortUnit


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    X: np.ndarray                    # (count, window_len, features)
    Y: np.ndarray                    # (count,)
    units: np.ndarray                # (count,) unit id of every window
    feature_lo: np.ndarray | None = None
    feature_hi: np.ndarray | None = None
    target_scale: float = 1.0
    target_offset: float = 0.0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.X)

    @property
    def window_len(self) -> int:
        return self.X.shape[1]

    def unscale_target(self, y):
        return np.asarray(y) * self.target_scale + self.target_offset

    def subset(self, idx) -> "WindowedDataset":
        return WindowedDataset(self.X[idx], self.Y[idx], self.units[idx], self.feature_lo,
                               self.feature_hi, self.target_scale, self.target_offset, self.meta)


@dataclass
class IngestManifest:
    unit_column: str
    window_len: int = 30
    rul_cap: float = 120.0
    feature_columns: list | None = None
    drop_columns: list = field(default_factory=list)
    time_column: str | None = None

    @classmethod
    def from_json(cls, path) -> "IngestManifest":
        return cls(**json.loads(Path(path).read_text()))


def _read_table(path):
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise MalformedRow("empty file", 0)
    delim = "," if "," in text[0] else None
    split = (lambda s: next(csv.reader([s]))) if delim else str.split
    header = [h.strip() for h in split(text[0])]
    rows = []
    for i, line in enumerate(text[1:]):
        if not line.strip():
            continue
        cells = split(line)
        if len(cells) != len(header):
            raise MalformedRow(f"row {i} has {len(cells)} fields, header has {len(header)}", i)
        try:
            rows.append([float(v) for v in cells])
        except ValueError as e:
            raise MalformedRow(f"row {i}: {e}", i) from None
        if not np.all(np.isfinite(rows[-1])):
            raise MalformedRow(f"row {i} has a non-finite value", i)
    return header, np.array(rows).reshape(-1, len(header))


def unit_rul(length: int, cap: float) -> np.ndarray:
    """Remaining useful life per row of a run-to-failure unit, capped at ``cap``."""
    return np.minimum(np.arange(length - 1, -1, -1, dtype=float), cap)


def ingest(path, manifest) -> WindowedDataset:
    if not isinstance(manifest, IngestManifest):
        manifest = IngestManifest(**manifest) if isinstance(manifest, dict) else IngestManifest.from_json(manifest)
    header, data = _read_table(path)
    if manifest.unit_column not in header:
        raise MalformedRow(f"unit column {manifest.unit_column!r} not in header", -1)
    ucol = header.index(manifest.unit_column)
    if manifest.feature_columns:
        feats = list(manifest.feature_columns)
    else:
        skip = set(manifest.drop_columns) | {manifest.unit_column, manifest.time_column}
        feats = [h for h in header if h not in skip]
    fidx = [header.index(f) for f in feats]
    F = data[:, fidx]
    lo, hi = F.min(axis=0), F.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    Fs = np.where(hi > lo, 2.0 * (F - lo) / span - 1.0, 0.0)

    L = manifest.window_len
    Xs, Ys, U = [], [], []
    units = data[:, ucol]
    # keep first-seen order of units
    _, first = np.unique(units, return_index=True)
    for uid in units[np.sort(first)]:
        rows = np.nonzero(units == uid)[0]
        if len(rows) < L:
            warnings.warn(f"unit {uid:g} has {len(rows)} rows < window {L}; skipped", ShortUnit)
            continue
        rul = unit_rul(len(rows), manifest.rul_cap)
        seq = Fs[rows]
        for end in range(L, len(rows) + 1):
            Xs.append(seq[end - L:end])
            Ys.append(rul[end - 1])
            U.append(uid)
    X = np.array(Xs).reshape(-1, L, len(feats))
    Y = np.array(Ys) / manifest.rul_cap
    return WindowedDataset(X, Y, np.array(U), lo, hi, target_scale=manifest.rul_cap,
                           meta={"features": feats, "rul_cap": manifest.rul_cap})


def lti_generator(a: float, order: int = 2):
    """Unit-DC-gain chain of ``order`` first-order lags with pole ``a``."""
    if not 0.0 <= abs(a) < 1.0:
        raise ValueError("generator pole must lie inside the unit circle")
    A = a * np.eye(order) + (1.0 - a) * np.eye(order, k=-1)
    B = np.zeros(order)
    B[0] = 1.0 - a
    C = np.zeros(order)
    C[-1] = 1.0
    return A, B, C


def synth_sequences(a: float = 0.9, order: int = 2, noise: float = 0.0, count: int = 2000,
                    length: int = 30, seed: int = 0) -> WindowedDataset:
    """Windows of uniform(-1, 1) input driving a stable LTI from rest.

    The target is the generator output at the last step of each window,
    mapped from [-1, 1] to [0, 1]; noise is added before the mapping.
    """
    rng = np.random.default_rng(seed)
    A, B, C = lti_generator(a, order)
    X = rng.uniform(-1.0, 1.0, size=(count, length, 1))
    s = np.zeros((count, order))
    for t in range(length):
        s = s @ A.T + X[:, t] * B
    y = s @ C
    if noise:
        y = y + noise * rng.standard_normal(count)
    return WindowedDataset(X, (y + 1.0) / 2.0, np.arange(count), target_scale=2.0, target_offset=-1.0,
                           meta={"a": a, "order": order, "noise": noise, "seed": seed})
