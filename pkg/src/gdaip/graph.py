"""Vertex graph topology and atlas-guided core-region extraction.

The adjacency relation comes straight from mesh triangles: two vertices are
neighbors iff some triangle contains both.  Core regions are the per-ROI
vertices farthest (in intra-ROI hop distance) from the ROI boundary; they act
as trusted labels on an individual graph.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .mesh import SurfaceMesh


@dataclass(frozen=True)
class Adjacency:
    """Symmetric, irreflexive sparse adjacency in CSR form.

    `indices[indptr[i]:indptr[i+1]]` is the sorted neighbor list of vertex i.
    Self-loops are never stored here; attention adds them internally.
    """

    vertex_count: int
    indptr: np.ndarray  # (V+1,) int64
    indices: np.ndarray  # (nnz,) int64

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def edge_count(self) -> int:
        """Number of undirected edges."""
        return self.indices.shape[0] // 2

    def is_connected(self) -> bool:
        if self.vertex_count == 0:
            return False
        seen = np.zeros(self.vertex_count, dtype=bool)
        queue = deque([0])
        seen[0] = True
        count = 1
        while queue:
            u = queue.popleft()
            for v in self.neighbors(u):
                if not seen[v]:
                    seen[v] = True
                    count += 1
                    queue.append(int(v))
        return count == self.vertex_count


@dataclass(frozen=True)
class Parcellation:
    """One ROI index per vertex against a fixed ROI count."""

    labels: np.ndarray  # (V,) int64
    n_roi: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise InputError("labels must be a flat vector")
        if self.n_roi <= 0:
            raise InputError("n_roi must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_roi):
            raise InputError(f"label outside [0, {self.n_roi})")
        object.__setattr__(self, "labels", labels)

    @property
    def vertex_count(self) -> int:
        return self.labels.shape[0]

    def roi_vertices(self, roi: int) -> np.ndarray:
        return np.flatnonzero(self.labels == roi)


@dataclass(frozen=True)
class CoreRegionSet:
    """Atlas labels restricted to per-ROI core vertices; the trusted subset."""

    vertices: np.ndarray  # (L,) int64, sorted
    labels: np.ndarray  # (L,) int64, atlas label per core vertex
    fraction: float
    vertex_count: int

    def unlabeled(self) -> np.ndarray:
        mask = np.ones(self.vertex_count, dtype=bool)
        mask[self.vertices] = False
        return np.flatnonzero(mask)


def build_adjacency(mesh: SurfaceMesh) -> Adjacency:
    """Vertices sharing a triangle are connected; symmetric and deterministic."""
    tris = mesh.triangles
    if tris.size == 0:
        indptr = np.zeros(mesh.vertex_count + 1, dtype=np.int64)
        return Adjacency(mesh.vertex_count, indptr, np.empty(0, dtype=np.int64))
    pairs = np.concatenate(
        [tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]],
         tris[:, [1, 0]], tris[:, [2, 1]], tris[:, [0, 2]]]
    )
    # Dedup directed pairs (shared edges appear once per incident triangle).
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    keep = np.ones(len(pairs), dtype=bool)
    keep[1:] = np.any(pairs[1:] != pairs[:-1], axis=1)
    pairs = pairs[keep]
    counts = np.bincount(pairs[:, 0], minlength=mesh.vertex_count)
    indptr = np.zeros(mesh.vertex_count + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return Adjacency(mesh.vertex_count, indptr, pairs[:, 1].astype(np.int64))


def _check_same_vertices(adj: Adjacency, atlas: Parcellation) -> None:
    if adj.vertex_count != atlas.vertex_count:
        raise InputError(
            f"adjacency has {adj.vertex_count} vertices, atlas {atlas.vertex_count}"
        )


def boundary_vertices(adj: Adjacency, atlas: Parcellation) -> np.ndarray:
    """Vertices adjacent to at least one vertex of a different ROI (sorted)."""
    _check_same_vertices(adj, atlas)
    labels = atlas.labels
    src = np.repeat(np.arange(adj.vertex_count), adj.degrees)
    cross = labels[src] != labels[adj.indices]
    return np.unique(src[cross])


def distance_to_boundary(
    adj: Adjacency, atlas: Parcellation, roi: int
) -> tuple[np.ndarray, np.ndarray]:
    """Hop distance from each ROI vertex to the ROI's boundary-vertex set.

    Breadth-first search runs over intra-ROI edges only, seeded at every
    boundary vertex of the ROI.  Vertices unreachable from any boundary vertex
    (including the whole ROI when it has no boundary) get +inf.

    Returns (roi_vertex_indices, distances) aligned arrays; both empty for an
    empty ROI.
    """
    _check_same_vertices(adj, atlas)
    members = atlas.roi_vertices(roi)
    if members.size == 0:
        import warnings

        warnings.warn(f"ROI {roi} is empty; no distances computed", stacklevel=2)
        return members, np.empty(0, dtype=np.float64)

    labels = atlas.labels
    in_roi = labels == roi
    dist = np.full(adj.vertex_count, np.inf)
    queue: deque[int] = deque()
    for v in members:
        for nb in adj.neighbors(v):
            if labels[nb] != roi:
                dist[v] = 0.0
                queue.append(int(v))
                break
    while queue:
        u = queue.popleft()
        du = dist[u]
        for nb in adj.neighbors(u):
            if in_roi[nb] and dist[nb] == np.inf:
                dist[nb] = du + 1.0
                queue.append(int(nb))
    return members, dist[members]


def core_region(adj: Adjacency, atlas: Parcellation, fraction: float) -> CoreRegionSet:
    """Per ROI, the ceil(fraction * size) vertices farthest from the boundary.

    +inf distances rank above every finite distance; ties break by ascending
    vertex index.  Every non-empty ROI contributes at least one vertex.
    """
    if not 0.0 < fraction <= 1.0:
        raise InputError(f"fraction must be in (0, 1], got {fraction}")
    _check_same_vertices(adj, atlas)
    chosen: list[np.ndarray] = []
    for roi in range(atlas.n_roi):
        members, dist = distance_to_boundary(adj, atlas, roi)
        if members.size == 0:
            continue
        take = max(1, int(np.ceil(fraction * members.size)))
        # Descending distance, ascending index; -inf from negating +inf sorts first.
        order = np.lexsort((members, -dist))
        chosen.append(members[order[:take]])
    if not chosen:
        raise InputError("atlas has no populated ROI")
    vertices = np.sort(np.concatenate(chosen))
    return CoreRegionSet(
        vertices=vertices,
        labels=atlas.labels[vertices],
        fraction=fraction,
        vertex_count=atlas.vertex_count,
    )


def hop_distances(adj: Adjacency, sources: np.ndarray) -> np.ndarray:
    """Plain multi-source BFS over the whole graph (no ROI restriction)."""
    dist = np.full(adj.vertex_count, np.inf)
    queue: deque[int] = deque()
    for s in sources:
        if dist[s] == np.inf:
            dist[s] = 0.0
            queue.append(int(s))
    while queue:
        u = queue.popleft()
        du = dist[u]
        for nb in adj.neighbors(u):
            if dist[nb] == np.inf:
                dist[nb] = du + 1.0
                queue.append(int(nb))
    return dist
