"""The individual-parcellation model: a three-layer multi-head graph attention
feature extractor feeding a temperature-scaled cosine-prototype classifier.

Per attention head h of a layer: ``z_i = W_h^T f_i``, logits
``e_ij = leaky(a_h^T [z_i || z_j])`` over j in neighbors(i) plus self, softmax
over that set, weighted sum; heads are concatenated.  An exponential-linear
activation sits between layers (none after the last).  The classifier
L2-normalizes features and prototype rows, scales their cosine similarity by
1/tau and applies softmax.

Checkpoint container (little-endian): magic ``GDPC``, u32 version, u32
feature_dim, u32 heads, u32 head_dim, u32 n_roi, f64 tau, then f64 parameter
blocks in fixed order (per layer: per-head weight matrices then per-head
attention vectors; finally the prototype matrix).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import NeighborhoodStructure, Node, Tape
from .errors import InputError
from .graph import Adjacency, Parcellation
from .util import atomic_write_bytes, derive_rng

CKPT_MAGIC = b"GDPC"
CKPT_VERSION = 1
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes; defaults follow the production model."""

    feature_dim: int
    n_roi: int
    heads: int = 4
    head_dim: int = 50
    tau: float = 0.05

    @property
    def layer_width(self) -> int:
        return self.heads * self.head_dim

    @property
    def layer_in_dims(self) -> tuple[int, int, int]:
        return (self.feature_dim, self.layer_width, self.layer_width)


@dataclass
class ModelParams:
    """Learnable state: per-layer projection + attention, and prototypes.

    ``weights[l]`` is (in_dim, heads*head_dim) with per-head column blocks;
    ``attention[l]`` is (heads, 2*head_dim); ``prototypes`` is
    (n_roi, heads*head_dim).  Prototype rows are unconstrained; normalization
    happens inside the classifier.
    """

    weights: list[np.ndarray]
    attention: list[np.ndarray]
    prototypes: np.ndarray
    tau: float = 0.05

    @property
    def heads(self) -> int:
        return self.attention[0].shape[0]

    @property
    def head_dim(self) -> int:
        return self.attention[0].shape[1] // 2

    @property
    def feature_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_roi(self) -> int:
        return self.prototypes.shape[0]

    def config(self) -> ModelConfig:
        return ModelConfig(self.feature_dim, self.n_roi, self.heads,
                           self.head_dim, self.tau)

    def named(self) -> dict[str, np.ndarray]:
        """Fixed-order name -> array view of every parameter block."""
        out: dict[str, np.ndarray] = {}
        for i, (w, a) in enumerate(zip(self.weights, self.attention), start=1):
            out[f"layer{i}.weight"] = w
            out[f"layer{i}.attn"] = a
        out["prototypes"] = self.prototypes
        return out

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights],
                           [a.copy() for a in self.attention],
                           self.prototypes.copy(), self.tau)


@dataclass(frozen=True)
class BrainGraph:
    """Sparse mesh adjacency plus per-vertex feature matrix."""

    adjacency: Adjacency
    features: np.ndarray  # (V, d) float64

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.adjacency.vertex_count:
            raise InputError(
                f"features {feats.shape} do not match {self.adjacency.vertex_count} vertices"
            )
        object.__setattr__(self, "features", feats)

    @property
    def vertex_count(self) -> int:
        return self.adjacency.vertex_count

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def attention_structure(adj: Adjacency) -> NeighborhoodStructure:
    """Neighbor-plus-self edge layout used by the fused attention op."""
    return NeighborhoodStructure.from_neighbor_lists(adj.indptr, adj.indices)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Seeded uniform init in [-s, s], s = sqrt(6 / (fan_in + fan_out))."""
    weights, attention = [], []
    for i, in_dim in enumerate(config.layer_in_dims, start=1):
        s_w = math.sqrt(6.0 / (in_dim + config.head_dim))
        rng = derive_rng(seed, "init", f"layer{i}.weight")
        weights.append(rng.uniform(-s_w, s_w, (in_dim, config.layer_width)))
        s_a = math.sqrt(6.0 / (2 * config.head_dim + 1))
        rng = derive_rng(seed, "init", f"layer{i}.attn")
        attention.append(rng.uniform(-s_a, s_a, (config.heads, 2 * config.head_dim)))
    s_p = math.sqrt(6.0 / (config.layer_width + config.n_roi))
    rng = derive_rng(seed, "init", "prototypes")
    prototypes = rng.uniform(-s_p, s_p, (config.n_roi, config.layer_width))
    return ModelParams(weights, attention, prototypes, config.tau)


class ParcellationProgram:
    """A tape realizing extractor + classifier for one fixed vertex set.

    When ``entropy_branch`` is set, a second classifier branch is appended
    behind a gradient-reverse node (strength 1; the adversarial weight is
    applied by the caller as an outer scale on the entropy term).
    """

    def __init__(self, structure: NeighborhoodStructure, config: ModelConfig,
                 entropy_branch: bool = False):
        self.config = config
        self.structure = structure
        tape = Tape()
        self.tape = tape
        n = structure.vertex_count
        feats = tape.input("features", (n, config.feature_dim))
        for i, in_dim in enumerate(config.layer_in_dims, start=1):
            w = tape.parameter(f"layer{i}.weight", (in_dim, config.layer_width))
            a = tape.parameter(f"layer{i}.attn", (config.heads, 2 * config.head_dim))
            z = tape.dense_linear(feats, w)
            feats = tape.neighbor_attention(z, a, structure, LEAKY_SLOPE)
            if i < len(config.layer_in_dims):
                feats = tape.exponential_linear(feats)
        self.extracted: Node = feats

        protos = tape.parameter("prototypes", (config.n_roi, config.layer_width))
        norm_protos = tape.row_l2_normalize(protos)

        def classifier(head: Node) -> Node:
            normed = tape.row_l2_normalize(head)
            cosine = tape.dense_linear(normed, norm_protos, transpose_w=True)
            return tape.temperature_softmax(cosine, config.tau)

        self.probs: Node = classifier(self.extracted)
        self.reversed_probs: Node | None = None
        if entropy_branch:
            reversed_feats = tape.gradient_reverse(self.extracted, 1.0)
            self.reversed_probs = classifier(reversed_feats)

    def bind(self, features: np.ndarray, params: ModelParams) -> None:
        self.tape.bind("features", features)
        for name, array in params.named().items():
            self.tape.bind(name, array)

    def forward(self) -> np.ndarray:
        self.tape.forward()
        return self.probs.value


def gat_layer(features: np.ndarray, adj: Adjacency, weight: np.ndarray,
              attn: np.ndarray, slope: float = LEAKY_SLOPE,
              apply_activation: bool = False) -> np.ndarray:
    """One multi-head attention layer on raw arrays.

    ``weight`` is (in_dim, heads*head_dim) with per-head column blocks,
    ``attn`` is (heads, 2*head_dim).  ``apply_activation`` appends the
    exponential-linear nonlinearity used between layers.
    """
    features = np.asarray(features, dtype=np.float64)
    structure = attention_structure(adj)
    tape = Tape()
    x = tape.input("x", features.shape)
    w = tape.input("w", weight.shape)
    a = tape.input("a", attn.shape)
    out = tape.neighbor_attention(tape.dense_linear(x, w), a, structure, slope)
    if apply_activation:
        out = tape.exponential_linear(out)
    tape.forward({"x": features, "w": weight, "a": attn})
    return out.value


def extract_features(graph: BrainGraph, params: ModelParams) -> np.ndarray:
    """Three attention layers with inter-layer activation; deterministic."""
    config = params.config()
    if graph.feature_dim != config.feature_dim:
        raise InputError(
            f"graph features have width {graph.feature_dim}, "
            f"model expects {config.feature_dim}"
        )
    program = ParcellationProgram(attention_structure(graph.adjacency), config)
    program.bind(graph.features, params)
    program.tape.forward()
    return program.extracted.value


def classify(features: np.ndarray, prototypes: np.ndarray, tau: float) -> np.ndarray:
    """Temperature-softmax over cosine similarity of normalized rows."""
    features = np.asarray(features, dtype=np.float64)
    prototypes = np.asarray(prototypes, dtype=np.float64)
    if tau <= 0:
        raise InputError("tau must be positive")
    tape = Tape()
    f = tape.input("f", features.shape)
    p = tape.input("p", prototypes.shape)
    cosine = tape.dense_linear(tape.row_l2_normalize(f), tape.row_l2_normalize(p),
                               transpose_w=True)
    probs = tape.temperature_softmax(cosine, tau)
    tape.forward({"f": features, "p": prototypes})
    return probs.value


def predict_parcellation(graph: BrainGraph, params: ModelParams,
                         tau: float | None = None) -> Parcellation:
    """Argmax class per vertex; ties resolve to the lowest class index."""
    config = params.config()
    probs = classify(extract_features(graph, params), params.prototypes,
                     config.tau if tau is None else tau)
    return Parcellation(np.argmax(probs, axis=1).astype(np.int64), config.n_roi)


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

def write_checkpoint(path: str | Path, params: ModelParams) -> None:
    config = params.config()
    parts = [CKPT_MAGIC,
             struct.pack("<IIIII", CKPT_VERSION, config.feature_dim, config.heads,
                         config.head_dim, config.n_roi),
             struct.pack("<d", config.tau)]
    hd = config.head_dim
    for w, a in zip(params.weights, params.attention):
        for h in range(config.heads):
            parts.append(w[:, h * hd:(h + 1) * hd].astype("<f8").tobytes(order="C"))
        for h in range(config.heads):
            parts.append(a[h].astype("<f8").tobytes(order="C"))
    parts.append(params.prototypes.astype("<f8").tobytes(order="C"))
    atomic_write_bytes(path, b"".join(parts))


def read_checkpoint(path: str | Path) -> ModelParams:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 32:
        raise InputError(f"{path}: truncated checkpoint ({len(blob)} bytes)")
    if blob[:4] != CKPT_MAGIC:
        raise InputError(
            f"{path}: bad magic at byte offset 0: expected {CKPT_MAGIC!r}, got {blob[:4]!r}"
        )
    version, d, heads, hd, n_roi = struct.unpack("<IIIII", blob[4:24])
    if version != CKPT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    (tau,) = struct.unpack("<d", blob[24:32])
    config = ModelConfig(d, n_roi, heads, hd, tau)
    offset = 32

    def take(rows: int, cols: int) -> np.ndarray:
        nonlocal offset
        count = rows * cols
        end = offset + 8 * count
        if end > len(blob):
            raise InputError(f"{path}: truncated parameter block at byte {offset}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset = end
        return arr.reshape(rows, cols).copy()

    weights, attention = [], []
    for in_dim in config.layer_in_dims:
        w = np.empty((in_dim, config.layer_width))
        for h in range(heads):
            w[:, h * hd:(h + 1) * hd] = take(in_dim, hd)
        weights.append(w)
        a = np.empty((heads, 2 * hd))
        for h in range(heads):
            a[h] = take(1, 2 * hd)[0]
        attention.append(a)
    prototypes = take(n_roi, config.layer_width)
    if offset != len(blob):
        raise InputError(f"{path}: {len(blob) - offset} trailing bytes")
    return ModelParams(weights, attention, prototypes, tau)
