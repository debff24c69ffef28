"""Triangular surface meshes: the synthetic icosphere generator and the text
mesh/label file formats.

Mesh file format::

    mesh <vertex_count> <triangle_count>
    v <x> <y> <z>          (one per vertex)
    t <i> <j> <k>          (one per triangle)

Label files carry one integer per line, one line per vertex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .util import atomic_write_text

MAX_SUBDIVISIONS = 7


@dataclass(frozen=True)
class SurfaceMesh:
    """Vertex coordinates plus triangle list; the source of graph topology."""

    coordinates: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (F, 3) int64

    def __post_init__(self):
        coords = np.asarray(self.coordinates, dtype=np.float64)
        tris = np.asarray(self.triangles, dtype=np.int64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise InputError("coordinates must be (V, 3)")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise InputError("triangles must be (F, 3)")
        if coords.shape[0] == 0:
            raise InputError("mesh has no vertices")
        if tris.size and (tris.min() < 0 or tris.max() >= coords.shape[0]):
            raise InputError("triangle index out of range")
        for row in tris:
            if len({int(row[0]), int(row[1]), int(row[2])}) != 3:
                raise InputError(f"degenerate triangle {tuple(int(v) for v in row)}")
        object.__setattr__(self, "coordinates", coords)
        object.__setattr__(self, "triangles", tris)

    @property
    def vertex_count(self) -> int:
        return self.coordinates.shape[0]

    @property
    def triangle_count(self) -> int:
        return self.triangles.shape[0]


# Canonical icosahedron: 12 vertices from three orthogonal golden rectangles,
# 20 counter-clockwise faces.
_PHI = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_COORDS = np.array(
    [
        [-1.0, _PHI, 0.0], [1.0, _PHI, 0.0], [-1.0, -_PHI, 0.0], [1.0, -_PHI, 0.0],
        [0.0, -1.0, _PHI], [0.0, 1.0, _PHI], [0.0, -1.0, -_PHI], [0.0, 1.0, -_PHI],
        [_PHI, 0.0, -1.0], [_PHI, 0.0, 1.0], [-_PHI, 0.0, -1.0], [-_PHI, 0.0, 1.0],
    ],
    dtype=np.float64,
)
_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def icosphere(subdivisions: int) -> SurfaceMesh:
    """Recursively subdivided icosahedron projected onto the unit sphere.

    Midpoints are deduplicated, so the vertex count is exactly
    ``10 * 4**subdivisions + 2``.  Vertex ordering is deterministic (base
    vertices first, then midpoints in face-traversal order).
    """
    if subdivisions < 0:
        raise InputError("subdivisions must be non-negative")
    if subdivisions > MAX_SUBDIVISIONS:
        raise InputError(f"subdivisions {subdivisions} exceeds guard {MAX_SUBDIVISIONS}")

    verts = [_unit(v) for v in _ICO_COORDS]
    faces = [tuple(f) for f in _ICO_FACES]

    for _ in range(subdivisions):
        midpoint_cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            idx = midpoint_cache.get(key)
            if idx is None:
                verts.append(_unit(0.5 * (verts[a] + verts[b])))
                idx = len(verts) - 1
                midpoint_cache[key] = idx
            return idx

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    return SurfaceMesh(np.array(verts), np.array(faces, dtype=np.int64))


def write_mesh(path: str | Path, mesh: SurfaceMesh) -> None:
    lines = [f"mesh {mesh.vertex_count} {mesh.triangle_count}"]
    for x, y, z in mesh.coordinates:
        lines.append(f"v {x!r} {y!r} {z!r}")
    for i, j, k in mesh.triangles:
        lines.append(f"t {i} {j} {k}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_mesh(path: str | Path) -> SurfaceMesh:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise InputError(f"{path}: empty mesh file")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "mesh":
        raise InputError(f"{path}:1: expected header 'mesh <V> <F>', got {lines[0]!r}")
    try:
        n_vert, n_tri = int(header[1]), int(header[2])
    except ValueError as exc:
        raise InputError(f"{path}:1: non-integer counts in header") from exc
    if len(lines) != 1 + n_vert + n_tri:
        raise InputError(
            f"{path}: header promises {n_vert} vertices + {n_tri} triangles, "
            f"file has {len(lines) - 1} records"
        )
    coords = np.empty((n_vert, 3), dtype=np.float64)
    for i in range(n_vert):
        parts = lines[1 + i].split()
        if len(parts) != 4 or parts[0] != "v":
            raise InputError(f"{path}:{2 + i}: expected 'v x y z', got {lines[1 + i]!r}")
        try:
            coords[i] = [float(parts[1]), float(parts[2]), float(parts[3])]
        except ValueError as exc:
            raise InputError(f"{path}:{2 + i}: bad coordinate") from exc
    tris = np.empty((n_tri, 3), dtype=np.int64)
    for i in range(n_tri):
        lineno = 1 + n_vert + i
        parts = lines[lineno].split()
        if len(parts) != 4 or parts[0] != "t":
            raise InputError(f"{path}:{lineno + 1}: expected 't i j k', got {lines[lineno]!r}")
        try:
            tris[i] = [int(parts[1]), int(parts[2]), int(parts[3])]
        except ValueError as exc:
            raise InputError(f"{path}:{lineno + 1}: bad triangle index") from exc
    return SurfaceMesh(coords, tris)


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    atomic_write_text(path, "\n".join(str(int(v)) for v in labels) + "\n")


def read_labels(path: str | Path) -> np.ndarray:
    path = Path(path)
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                values.append(int(raw))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: non-integer label {raw!r}") from exc
    if not values:
        raise InputError(f"{path}: empty label file")
    return np.asarray(values, dtype=np.int64)
