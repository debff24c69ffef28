"""Semi-supervised adversarial training loop.

One full-graph step evaluates the model jointly on the source graph (fully
labeled by the reference atlas) and the target graph (labeled only at core
vertices).  The classification loss is the sum of two separately averaged
cross-entropy terms (source, labeled target).  The entropy of predictions on
unlabeled target vertices is routed through a gradient-reverse node and enters
the total with weight ``-lambda_mme``, so one backward pass gives the
classifier ``-lambda * dH`` (it ascends entropy) and the feature extractor
``+lambda * dH`` (it descends entropy).

Optimizer: SGD with momentum, weight decay added to the gradient, and a
halving learning-rate schedule ``lr(t) = lr0 * 0.5 ** (t // period)``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import DivergenceError, InputError
from .graph import Adjacency, Parcellation
from .model import (BrainGraph, ModelConfig, ModelParams, ParcellationProgram,
                    attention_structure, init_params)
from .metrics import dice
from .util import atomic_write_text


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 4000
    lr0: float = 0.01
    lr_halving_period: int = 1000
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lambda_mme: float = 0.1
    tau: float = 0.05
    core_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise InputError("steps must be >= 0")
        if self.lr0 <= 0 or self.lr_halving_period <= 0:
            raise InputError("learning rate and halving period must be positive")
        if self.lambda_mme < 0:
            raise InputError("lambda_mme must be >= 0")
        if not 0 < self.core_fraction <= 1:
            raise InputError("core_fraction must be in (0, 1]")


_INT_FIELDS = {"steps", "lr_halving_period", "seed"}


def write_train_config(path: str | Path, config: TrainConfig) -> None:
    lines = [f"{f.name}={getattr(config, f.name)!r}" if False else
             f"{f.name}={getattr(config, f.name)}" for f in fields(TrainConfig)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_train_config(path: str | Path, overrides: dict | None = None) -> TrainConfig:
    """Parse a key=value config file; explicit overrides win."""
    values: dict = {}
    known = {f.name for f in fields(TrainConfig)}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in known:
                raise InputError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = int(val) if key in _INT_FIELDS else float(val)
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: bad value for {key}") from exc
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


@dataclass
class DomainBatch:
    """Source graph with full labels; target graph with core labels only."""

    source_graph: BrainGraph
    source_labels: np.ndarray
    n_roi: int
    target_graph: BrainGraph | None = None
    core_vertices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    core_labels: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        self.source_labels = np.asarray(self.source_labels, dtype=np.int64)
        self.core_vertices = np.asarray(self.core_vertices, dtype=np.int64)
        self.core_labels = np.asarray(self.core_labels, dtype=np.int64)
        if self.source_labels.shape[0] != self.source_graph.vertex_count:
            raise InputError("source labels do not cover the source graph")
        if self.source_labels.size and self.source_labels.max() >= self.n_roi:
            raise InputError("source label outside ROI range")
        if self.core_vertices.shape != self.core_labels.shape:
            raise InputError("core vertices and labels differ in length")
        if self.core_vertices.size:
            if self.target_graph is None:
                raise InputError("core labels given without a target graph")
            if self.core_vertices.max() >= self.target_graph.vertex_count:
                raise InputError("core vertex outside the target graph")
            if np.unique(self.core_vertices).size != self.core_vertices.size:
                raise InputError("duplicate core vertices")
            if self.core_labels.max() >= self.n_roi:
                raise InputError("core label outside ROI range")

    def unlabeled_vertices(self) -> np.ndarray:
        if self.target_graph is None:
            return np.empty(0, dtype=np.int64)
        mask = np.ones(self.target_graph.vertex_count, dtype=bool)
        mask[self.core_vertices] = False
        return np.flatnonzero(mask)


@dataclass
class TrainHistory:
    steps: np.ndarray
    lr: np.ndarray
    cls_loss: np.ndarray
    ent_loss: np.ndarray
    val_dice: np.ndarray | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = "step,lr,cls_loss,ent_loss"
        if self.val_dice is not None:
            cols += ",val_dice"
        buf.write(cols + "\n")
        for i in range(self.steps.shape[0]):
            row = f"{int(self.steps[i])},{self.lr[i]!r},{self.cls_loss[i]!r},{self.ent_loss[i]!r}"
            if self.val_dice is not None:
                row += f",{self.val_dice[i]!r}"
            buf.write(row + "\n")
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        atomic_write_text(path, self.to_csv())


def learning_rate(step: int, config: TrainConfig) -> float:
    return config.lr0 * 0.5 ** (step // config.lr_halving_period)


def cls_loss(pred_source: np.ndarray, y_source: np.ndarray,
             pred_target_labeled: np.ndarray | None = None,
             y_target_labeled: np.ndarray | None = None,
             eps: float = 1e-12) -> float:
    """Sum of the two separately averaged cross-entropy terms."""
    y_source = np.asarray(y_source, dtype=np.int64)
    total = -np.mean(np.log(np.maximum(
        pred_source[np.arange(pred_source.shape[0]), y_source], eps)))
    if pred_target_labeled is not None and pred_target_labeled.shape[0]:
        y_t = np.asarray(y_target_labeled, dtype=np.int64)
        total += -np.mean(np.log(np.maximum(
            pred_target_labeled[np.arange(pred_target_labeled.shape[0]), y_t], eps)))
    return float(total)


def ent_loss(pred_target_unlabeled: np.ndarray) -> float:
    """Mean Shannon entropy of the prediction rows (non-negative)."""
    p = np.asarray(pred_target_unlabeled, dtype=np.float64)
    plogp = np.zeros_like(p)
    positive = p > 0.0
    plogp[positive] = p[positive] * np.log(p[positive])
    return float(-plogp.sum() / p.shape[0])


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             velocity: dict[str, np.ndarray], lr: float, momentum: float,
             weight_decay: float) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """v <- momentum*v + (grad + wd*theta); theta <- theta - lr*v (in place)."""
    for name, theta in params.items():
        g = grads[name]
        v = velocity[name]
        v *= momentum
        v += g + weight_decay * theta
        theta -= lr * v
    return params, velocity


def _stack_graphs(source: BrainGraph, target: BrainGraph) -> BrainGraph:
    """Disjoint union: attention neighborhoods never cross the two blocks, so
    running the extractor once on the stack equals two separate passes."""
    if source.feature_dim != target.feature_dim:
        raise InputError(
            f"feature widths differ: source {source.feature_dim}, "
            f"target {target.feature_dim}"
        )
    ns = source.vertex_count
    indptr = np.concatenate([source.adjacency.indptr,
                             source.adjacency.indptr[-1] + target.adjacency.indptr[1:]])
    indices = np.concatenate([source.adjacency.indices, target.adjacency.indices + ns])
    adj = Adjacency(ns + target.vertex_count, indptr.astype(np.int64),
                    indices.astype(np.int64))
    return BrainGraph(adj, np.vstack([source.features, target.features]))


def train(batch: DomainBatch, config: TrainConfig,
          ground_truth: Parcellation | None = None,
          record_val_dice: bool = False,
          initial_params: ModelParams | None = None) -> tuple[ModelParams, TrainHistory]:
    """Run the full training schedule; deterministic given the config seed.

    ``ground_truth`` (a target parcellation) enables per-step validation Dice
    when ``record_val_dice`` is set.  Branches that feed no loss term are left
    out of the tape; with ``lambda_mme == 0`` and no core labels this reduces
    to supervised node classification on the source graph.
    """
    has_core = batch.core_vertices.size > 0
    unlabeled = batch.unlabeled_vertices()
    has_entropy = (config.lambda_mme > 0 and batch.target_graph is not None
                   and unlabeled.size > 0)
    needs_target = batch.target_graph is not None and (has_core or has_entropy
                                                       or record_val_dice)

    if needs_target:
        combined = _stack_graphs(batch.source_graph, batch.target_graph)
    else:
        combined = batch.source_graph
    ns = batch.source_graph.vertex_count

    model_config = ModelConfig(combined.feature_dim, batch.n_roi, tau=config.tau)
    params = (initial_params.copy() if initial_params is not None
              else init_params(model_config, config.seed))
    if params.config() != model_config:
        raise InputError("initial parameters do not match the batch dimensions")

    program = ParcellationProgram(attention_structure(combined.adjacency),
                                  model_config, entropy_branch=has_entropy)
    tape = program.tape
    ce_source = tape.cross_entropy_mean(program.probs, batch.source_labels,
                                        rows=np.arange(ns))
    total = ce_source
    if has_core:
        ce_core = tape.cross_entropy_mean(program.probs, batch.core_labels,
                                          rows=ns + batch.core_vertices)
        total = tape.scalar_add(ce_source, ce_core)
    l_cls_node = total
    ent_node = None
    if has_entropy:
        ent_node = tape.entropy_mean(program.reversed_probs, rows=ns + unlabeled)
        total = tape.scalar_add(total, tape.scalar_scale(ent_node, -config.lambda_mme))

    program.bind(combined.features, params)
    named = params.named()
    velocity = {name: np.zeros_like(arr) for name, arr in named.items()}

    n_steps = config.steps
    hist_lr = np.empty(n_steps)
    hist_cls = np.empty(n_steps)
    hist_ent = np.zeros(n_steps)
    hist_val = np.empty(n_steps) if (record_val_dice and ground_truth is not None
                                     and needs_target) else None

    for step in range(n_steps):
        tape.forward()
        cls_value = float(l_cls_node.value)
        if not np.isfinite(cls_value):
            raise DivergenceError(step)
        hist_cls[step] = cls_value
        if ent_node is not None:
            hist_ent[step] = float(ent_node.value)
        if hist_val is not None:
            pred = np.argmax(program.probs.value[ns:], axis=1)
            hist_val[step] = dice(Parcellation(pred, batch.n_roi), ground_truth).mean
        lr = learning_rate(step, config)
        hist_lr[step] = lr
        grads = tape.backward(total)
        sgd_step(named, grads, velocity, lr, config.momentum, config.weight_decay)

    history = TrainHistory(np.arange(n_steps), hist_lr, hist_cls, hist_ent, hist_val)
    return params, history
