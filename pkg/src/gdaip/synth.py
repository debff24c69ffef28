"""Ground-truth-bearing synthetic corpora: planted atlases on icosphere
meshes, boundary-perturbed per-subject atlases, simulated vertex time series,
and a controlled domain shift between the source group and target subjects.

Every generator is a pure function of (spec, seed); per-subject and
per-session streams derive from the root seed by name, so corpora are
reproducible piece by piece.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .connectome import TimeSeries, write_timeseries
from .errors import InputError
from .graph import Adjacency, Parcellation, boundary_vertices, build_adjacency, core_region
from .mesh import SurfaceMesh, icosphere, write_labels, write_mesh
from .util import atomic_write_text, derive_rng

PROTECTED_CORE_FRACTION = 0.05
AR_COEFF = 0.3


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for one synthetic corpus."""

    subdivisions: int = 3
    n_roi: int = 20
    n_subjects: int = 10  # target subjects carrying planted individual atlases
    n_sessions: int = 2
    n_source_subjects: int = 8  # source group behind the reference atlas
    t_len: int = 384
    signal_dim: int = 3  # sinusoids per ROI signal
    noise_sigma: float = 0.6
    perturbation: float = 0.3
    shift_sigma: float = 1.2
    shift_width: int = 5
    shift_scale: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if min(self.n_roi, self.n_subjects, self.n_sessions, self.n_source_subjects,
               self.t_len, self.signal_dim) <= 0:
            raise InputError("all counts must be positive")
        if not 0.0 <= self.perturbation <= 1.0:
            raise InputError("perturbation strength must be in [0, 1]")
        if self.noise_sigma < 0 or self.shift_sigma < 0:
            raise InputError("noise levels must be non-negative")


def planted_atlas(mesh: SurfaceMesh, n_roi: int, seed: int) -> Parcellation:
    """Farthest-point seeds (hop metric) plus BFS Voronoi assignment.

    Every ROI comes out non-empty and hop-connected; deterministic in the
    seed.
    """
    adj = build_adjacency(mesh)
    if n_roi > mesh.vertex_count:
        raise InputError("more ROIs than vertices")
    if not adj.is_connected():
        raise InputError("mesh graph is not connected")

    rng = derive_rng(seed, "atlas-seeds")
    first = int(rng.integers(0, mesh.vertex_count))
    seeds = [first]
    dist = _bfs_distances(adj, first)
    for _ in range(1, n_roi):
        # Farthest vertex from the chosen set; ties to the lowest index.
        nxt = int(np.argmax(dist))
        seeds.append(nxt)
        np.minimum(dist, _bfs_distances(adj, nxt), out=dist)

    labels = np.full(mesh.vertex_count, -1, dtype=np.int64)
    queue: deque[int] = deque()
    for roi, s in enumerate(seeds):
        labels[s] = roi
        queue.append(s)
    while queue:
        u = queue.popleft()
        for nb in adj.neighbors(u):
            if labels[nb] < 0:
                labels[nb] = labels[u]
                queue.append(int(nb))
    return Parcellation(labels, n_roi)


def _bfs_distances(adj: Adjacency, source: int) -> np.ndarray:
    dist = np.full(adj.vertex_count, np.inf)
    dist[source] = 0.0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for nb in adj.neighbors(u):
            if dist[nb] == np.inf:
                dist[nb] = dist[u] + 1.0
                queue.append(int(nb))
    return dist


def perturb_atlas(atlas: Parcellation, adj: Adjacency, strength: float,
                  seed: int) -> Parcellation:
    """Iterative boundary flips modelling individual deviation from an atlas.

    Runs ceil(10*strength) rounds; in each, every current boundary vertex
    flips to a uniformly chosen neighboring ROI with probability ``strength``.
    Core regions of the ORIGINAL atlas (fraction 0.05) are never flipped, so
    the trusted-core assumption holds in the generated ground truth and every
    ROI stays non-empty.
    """
    if not 0.0 <= strength <= 1.0:
        raise InputError("strength must be in [0, 1]")
    if strength == 0.0:
        return Parcellation(atlas.labels.copy(), atlas.n_roi)
    protected = np.zeros(atlas.vertex_count, dtype=bool)
    protected[core_region(adj, atlas, PROTECTED_CORE_FRACTION).vertices] = True

    rng = derive_rng(seed, "perturb")
    labels = atlas.labels.copy()
    rounds = int(np.ceil(10.0 * strength))
    for _ in range(rounds):
        current = Parcellation(labels, atlas.n_roi)
        flips: list[tuple[int, int]] = []
        for v in boundary_vertices(adj, current):
            if protected[v]:
                continue
            if rng.random() >= strength:
                continue
            foreign = np.unique(labels[adj.neighbors(v)])
            foreign = foreign[foreign != labels[v]]
            if foreign.size == 0:
                continue
            flips.append((int(v), int(rng.choice(foreign))))
        for v, new_label in flips:
            labels[v] = new_label
    return Parcellation(labels, atlas.n_roi)


def _roi_signals(n_roi: int, t_len: int, signal_dim: int, seed: int) -> np.ndarray:
    """Latent per-ROI signals: disjoint integer-frequency sinusoid banks plus
    AR(1) noise.  Disjoint banks keep distinct ROIs near-orthogonal."""
    rng = derive_rng(seed, "roi-signals")
    max_freq = max(t_len // 4, n_roi * signal_dim + 1)
    freqs = rng.choice(np.arange(1, max_freq + 1), size=n_roi * signal_dim,
                       replace=False).reshape(n_roi, signal_dim)
    phases = rng.uniform(0.0, 2.0 * np.pi, (n_roi, signal_dim))
    amps = rng.uniform(0.5, 1.5, (n_roi, signal_dim))
    t_axis = np.arange(t_len)
    signals = np.zeros((n_roi, t_len))
    for r in range(n_roi):
        for m in range(signal_dim):
            signals[r] += amps[r, m] * np.sin(
                2.0 * np.pi * freqs[r, m] * t_axis / t_len + phases[r, m]
            )
        innovations = rng.standard_normal(t_len) * AR_COEFF
        ar = np.empty(t_len)
        ar[0] = innovations[0]
        for k in range(1, t_len):
            ar[k] = AR_COEFF * ar[k - 1] + innovations[k]
        signals[r] += ar
    return signals


def simulate_bold(atlas: Parcellation, spec: SynthSpec, seed: int) -> TimeSeries:
    """Each vertex emits its ROI's latent signal plus Gaussian vertex noise."""
    if spec.t_len < 32:
        raise InputError("need at least 32 time points")
    signals = _roi_signals(atlas.n_roi, spec.t_len, spec.signal_dim, seed)
    rng = derive_rng(seed, "vertex-noise")
    data = signals[atlas.labels].T.copy()
    if spec.noise_sigma > 0:
        data += rng.standard_normal(data.shape) * spec.noise_sigma
    return TimeSeries(data)


def domain_shift(ts: TimeSeries, spec: SynthSpec, seed: int) -> TimeSeries:
    """Moving-average smoothing, extra Gaussian noise, global rescale."""
    width = spec.shift_width
    if width >= ts.t_len / 4:
        raise InputError(f"smoothing width {width} too large for T={ts.t_len}")
    data = ts.data
    if width > 1:
        kernel = np.ones(width) / width
        padded = np.pad(data, ((width // 2, width - 1 - width // 2), (0, 0)), mode="edge")
        data = np.empty_like(ts.data)
        for col in range(data.shape[1]):
            data[:, col] = np.convolve(padded[:, col], kernel, mode="valid")
    else:
        data = data.copy()
    if spec.shift_sigma > 0:
        rng = derive_rng(seed, "shift-noise")
        data += rng.standard_normal(data.shape) * spec.shift_sigma
    data *= spec.shift_scale
    return TimeSeries(data)


# ---------------------------------------------------------------------------
# Corpus layout on disk
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusPaths:
    root: Path

    @property
    def mesh(self) -> Path:
        return self.root / "mesh.txt"

    @property
    def reference_atlas(self) -> Path:
        return self.root / "reference_atlas.labels"

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    def source_timeseries(self, subject: int) -> Path:
        return self.root / "source" / f"sub-{subject:03d}.tsf"

    def subject_dir(self, subject: int) -> Path:
        return self.root / f"sub-{subject:03d}"

    def planted_atlas(self, subject: int) -> Path:
        return self.subject_dir(subject) / "planted_atlas.labels"

    def session_timeseries(self, subject: int, session: int) -> Path:
        return self.subject_dir(subject) / f"ses-{session:02d}.tsf"


def generate_corpus(spec: SynthSpec, out_dir: str | Path) -> CorpusPaths:
    """Write a full corpus: mesh, reference atlas, per-subject planted
    atlases, per-session (shifted) target time series, unshifted source group
    time series, and a manifest recording the spec."""
    paths = CorpusPaths(Path(out_dir))
    paths.root.mkdir(parents=True, exist_ok=True)
    (paths.root / "source").mkdir(exist_ok=True)

    mesh = icosphere(spec.subdivisions)
    adj = build_adjacency(mesh)
    reference = planted_atlas(mesh, spec.n_roi, spec.seed)
    write_mesh(paths.mesh, mesh)
    write_labels(paths.reference_atlas, reference.labels)

    for subject in range(spec.n_source_subjects):
        stream = derive_rng(spec.seed, "source", subject).integers(0, 2 ** 63)
        bold = simulate_bold(reference, spec, int(stream))
        write_timeseries(paths.source_timeseries(subject), bold)

    for subject in range(spec.n_subjects):
        paths.subject_dir(subject).mkdir(exist_ok=True)
        atlas_stream = derive_rng(spec.seed, "target-atlas", subject).integers(0, 2 ** 63)
        planted = perturb_atlas(reference, adj, spec.perturbation, int(atlas_stream))
        write_labels(paths.planted_atlas(subject), planted.labels)
        for session in range(spec.n_sessions):
            stream = derive_rng(spec.seed, "target-bold", subject, session)
            bold_seed = int(stream.integers(0, 2 ** 63))
            bold = simulate_bold(planted, spec, bold_seed)
            shifted = domain_shift(bold, spec, bold_seed)
            write_timeseries(paths.session_timeseries(subject, session), shifted)

    manifest = {
        "kind": "synthetic-corpus",
        "spec": asdict(spec),
        "vertex_count": mesh.vertex_count,
        "triangle_count": mesh.triangle_count,
        "source_subjects": [f"source/sub-{s:03d}.tsf" for s in range(spec.n_source_subjects)],
        "subjects": [
            {
                "id": subject,
                "planted_atlas": f"sub-{subject:03d}/planted_atlas.labels",
                "sessions": [f"sub-{subject:03d}/ses-{ses:02d}.tsf"
                             for ses in range(spec.n_sessions)],
            }
            for subject in range(spec.n_subjects)
        ],
    }
    atomic_write_text(paths.manifest, json.dumps(manifest, indent=2) + "\n")
    return paths


def read_corpus_spec(corpus_dir: str | Path) -> SynthSpec:
    manifest_path = Path(corpus_dir) / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError as exc:
        raise InputError(f"{manifest_path}: missing corpus manifest") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{manifest_path}: invalid JSON: {exc}") from exc
    if manifest.get("kind") != "synthetic-corpus":
        raise InputError(f"{manifest_path}: not a corpus manifest")
    return SynthSpec(**manifest["spec"])
