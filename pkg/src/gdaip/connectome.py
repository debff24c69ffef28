"""Functional-connectivity fingerprints and joint PCA feature reduction.

A vertex's fingerprint is its row of the vertex-by-vertex Pearson correlation
matrix.  Group-level and individual fingerprints are reduced together with one
PCA over the row-concatenated pair so both domains land in the same feature
space.

Binary containers (little-endian):

* time series: magic ``TSF1``, u32 T, u32 N, then T*N f32 row-major
  (time-major rows);
* matrices: magic ``MAT1``, u32 rows, u32 cols, then f64 payload row-major.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .util import atomic_write_bytes

TS_MAGIC = b"TSF1"
MAT_MAGIC = b"MAT1"


@dataclass(frozen=True)
class TimeSeries:
    """T x N matrix of vertex time series (arbitrary BOLD units)."""

    data: np.ndarray  # (T, N) float64

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise InputError("time series must be 2-D (time x vertices)")
        if data.shape[0] < 2:
            raise InputError("need at least 2 time points")
        if not np.all(np.isfinite(data)):
            raise InputError("time series contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def t_len(self) -> int:
        return self.data.shape[0]

    @property
    def vertex_count(self) -> int:
        return self.data.shape[1]


def pearson_fc(ts: TimeSeries) -> tuple[np.ndarray, np.ndarray]:
    """Vertex-by-vertex Pearson correlation matrix.

    Zero-variance vertices get an all-zero row/column with diagonal 1 and are
    reported in the returned degenerate-vertex index array.

    Returns (fc, degenerate_vertices).
    """
    x = ts.data
    centered = x - x.mean(axis=0)
    norms = np.sqrt(np.sum(centered * centered, axis=0))
    degenerate = np.flatnonzero(norms == 0.0)
    safe = norms.copy()
    safe[degenerate] = 1.0
    z = centered / safe
    fc = z.T @ z
    fc = 0.5 * (fc + fc.T)
    np.clip(fc, -1.0, 1.0, out=fc)
    if degenerate.size:
        fc[degenerate, :] = 0.0
        fc[:, degenerate] = 0.0
    np.fill_diagonal(fc, 1.0)
    return fc, degenerate


def group_average(fcs: list[np.ndarray]) -> np.ndarray:
    """Element-wise mean of same-shape FC matrices."""
    if not fcs:
        raise InputError("group_average needs at least one matrix")
    shape = fcs[0].shape
    for m in fcs[1:]:
        if m.shape != shape:
            raise InputError(f"shape mismatch: {m.shape} vs {shape}")
    out = np.zeros(shape, dtype=np.float64)
    for m in fcs:
        out += m
    out /= len(fcs)
    return 0.5 * (out + out.T)


def joint_pca(
    c_source: np.ndarray, c_target: np.ndarray, d: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reduce both fingerprint matrices with one PCA over their row-concat.

    The 2N x N stack is centered by its joint column mean and projected onto
    the top-d right singular vectors.  Each component's sign is fixed so its
    largest-magnitude coordinate is positive, making the output reproducible.
    If the stack has rank < d the missing components are zero-padded (with a
    warning).

    Returns (source_features, target_features, components) where components
    is d x N (rows orthonormal up to the padded ones).
    """
    c_source = np.asarray(c_source, dtype=np.float64)
    c_target = np.asarray(c_target, dtype=np.float64)
    if c_source.shape != c_target.shape:
        raise InputError(f"shape mismatch: {c_source.shape} vs {c_target.shape}")
    n = c_source.shape[1]
    if d > n:
        raise InputError(f"PCA dimension {d} exceeds fingerprint width {n}")
    if d <= 0:
        raise InputError("PCA dimension must be positive")

    stacked = np.vstack([c_source, c_target])
    stacked = stacked - stacked.mean(axis=0)
    _, svals, vt = np.linalg.svd(stacked, full_matrices=False)
    tol = svals[0] * max(stacked.shape) * np.finfo(np.float64).eps if svals.size else 0.0
    rank = int(np.sum(svals > tol))
    components = np.zeros((d, n), dtype=np.float64)
    usable = min(d, rank)
    components[:usable] = vt[:usable]
    if usable < d:
        warnings.warn(
            f"rank {rank} below requested dimension {d}; padding with zero components",
            stacklevel=2,
        )
    for row in components[:usable]:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    feats = stacked @ components.T
    n_rows = c_source.shape[0]
    return feats[:n_rows], feats[n_rows:], components


# ---------------------------------------------------------------------------
# Binary containers
# ---------------------------------------------------------------------------

def _check_magic(blob: bytes, magic: bytes, path) -> None:
    if blob[: len(magic)] != magic:
        raise InputError(
            f"{path}: bad magic at byte offset 0: expected {magic!r}, "
            f"got {blob[:len(magic)]!r}"
        )


def write_timeseries(path: str | Path, ts: TimeSeries) -> None:
    header = TS_MAGIC + struct.pack("<II", ts.t_len, ts.vertex_count)
    payload = ts.data.astype("<f4").tobytes(order="C")
    atomic_write_bytes(path, header + payload)


def read_timeseries(path: str | Path) -> TimeSeries:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12:
        raise InputError(f"{path}: truncated header ({len(blob)} bytes)")
    _check_magic(blob, TS_MAGIC, path)
    t_len, n = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * t_len * n
    if len(blob) != expected:
        raise InputError(f"{path}: expected {expected} bytes for {t_len}x{n}, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=12).reshape(t_len, n)
    return TimeSeries(data.astype(np.float64))


def write_matrix(path: str | Path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise InputError("matrix container stores 2-D arrays")
    header = MAT_MAGIC + struct.pack("<II", matrix.shape[0], matrix.shape[1])
    atomic_write_bytes(path, header + matrix.astype("<f8").tobytes(order="C"))


def read_matrix(path: str | Path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12:
        raise InputError(f"{path}: truncated header ({len(blob)} bytes)")
    _check_magic(blob, MAT_MAGIC, path)
    rows, cols = struct.unpack("<II", blob[4:12])
    expected = 12 + 8 * rows * cols
    if len(blob) != expected:
        raise InputError(f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(blob)}")
    return np.frombuffer(blob, dtype="<f8", offset=12).reshape(rows, cols).copy()
