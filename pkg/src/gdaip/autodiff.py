"""Minimal reverse-mode differentiation over the fixed operator set the
parcellation model needs.

A `Tape` is a topologically ordered node list built through the op methods
below; creation order is evaluation order, and `backward` walks it in exact
reverse.  Everything is float64.  The one non-standard node is
``gradient-reverse``: identity in the forward direction, multiplies the
incoming adjoint by ``-kappa`` in the backward direction.

The neighborhood attention op is fused (logits -> masked softmax over each
vertex's neighbors-plus-self -> weighted sum) so the backward pass stays
hand-verifiable; its inner loops are numba-compiled with fixed iteration
order, keeping gradients bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InputError

NORM_EPS = 1e-12
CLAMP_EPS = 1e-12

OP_KINDS = (
    "parameter",
    "input",
    "dense-linear",
    "leaky-rectifier",
    "exponential-linear",
    "neighbor-attention-softmax-aggregate",
    "row-l2-normalize",
    "temperature-softmax",
    "cross-entropy-mean",
    "entropy-mean",
    "scalar-add",
    "scalar-scale",
    "gradient-reverse",
    "head-concat",
)


@dataclass(frozen=True)
class NeighborhoodStructure:
    """Directed edge layout for attention: per vertex, neighbors plus self.

    ``dst[indptr[i]:indptr[i+1]]`` lists the attention support of vertex i in
    ascending order (the self-loop included).
    """

    vertex_count: int
    indptr: np.ndarray  # (N+1,) int64
    dst: np.ndarray  # (E,) int64

    @classmethod
    def from_neighbor_lists(cls, indptr: np.ndarray, indices: np.ndarray):
        n = indptr.shape[0] - 1
        rows = []
        for i in range(n):
            nb = indices[indptr[i]:indptr[i + 1]]
            rows.append(np.sort(np.append(nb, i)))
        out_indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum([r.size for r in rows], out=out_indptr[1:])
        dst = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
        return cls(n, out_indptr, dst.astype(np.int64))


# ---------------------------------------------------------------------------
# numba kernels for the fused attention op
# ---------------------------------------------------------------------------

@njit(cache=True)
def _elu_forward(x, alpha):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            v = x[i, j]
            out[i, j] = v if v > 0.0 else alpha * np.expm1(v)
    return out


@njit(cache=True)
def _elu_backward(g, x, y, alpha):
    out = np.empty_like(g)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            out[i, j] = g[i, j] if x[i, j] > 0.0 else g[i, j] * (y[i, j] + alpha)
    return out


@njit(cache=True)
def _attention_forward(z, a_left, a_right, indptr, dst, slope, heads, hd):
    n = z.shape[0]
    s = np.empty((n, heads))
    t = np.empty((n, heads))
    for i in range(n):
        for h in range(heads):
            base = h * hd
            acc_l = 0.0
            acc_r = 0.0
            for c in range(hd):
                acc_l += a_left[h, c] * z[i, base + c]
                acc_r += a_right[h, c] * z[i, base + c]
            s[i, h] = acc_l
            t[i, h] = acc_r
    alpha = np.empty((dst.shape[0], heads))
    out = np.zeros_like(z)
    for i in range(n):
        lo = indptr[i]
        hi = indptr[i + 1]
        for h in range(heads):
            base = h * hd
            mx = -1e300
            for k in range(lo, hi):
                u = s[i, h] + t[dst[k], h]
                e = u if u > 0.0 else slope * u
                alpha[k, h] = e
                if e > mx:
                    mx = e
            total = 0.0
            for k in range(lo, hi):
                w = np.exp(alpha[k, h] - mx)
                alpha[k, h] = w
                total += w
            inv = 1.0 / total
            for k in range(lo, hi):
                w = alpha[k, h] * inv
                alpha[k, h] = w
                j = dst[k]
                for c in range(hd):
                    out[i, base + c] += w * z[j, base + c]
    return out, alpha, s, t


@njit(cache=True)
def _attention_backward(d_out, z, a_left, a_right, alpha, s, t, indptr, dst,
                        slope, heads, hd):
    n = z.shape[0]
    dz = np.zeros_like(z)
    ds = np.zeros((n, heads))
    dt = np.zeros((n, heads))
    d_alpha = np.empty(dst.shape[0])
    for i in range(n):
        lo = indptr[i]
        hi = indptr[i + 1]
        for h in range(heads):
            base = h * hd
            sigma = 0.0
            for k in range(lo, hi):
                j = dst[k]
                dp = 0.0
                for c in range(hd):
                    dp += d_out[i, base + c] * z[j, base + c]
                d_alpha[k] = dp
                sigma += alpha[k, h] * dp
            for k in range(lo, hi):
                j = dst[k]
                w = alpha[k, h]
                de = w * (d_alpha[k] - sigma)
                u = s[i, h] + t[j, h]
                du = de if u > 0.0 else slope * de
                ds[i, h] += du
                dt[j, h] += du
                for c in range(hd):
                    dz[j, base + c] += w * d_out[i, base + c]
    da_left = np.zeros_like(a_left)
    da_right = np.zeros_like(a_right)
    for h in range(heads):
        base = h * hd
        for i in range(n):
            sh = ds[i, h]
            th = dt[i, h]
            for c in range(hd):
                dz[i, base + c] += sh * a_left[h, c] + th * a_right[h, c]
                da_left[h, c] += sh * z[i, base + c]
                da_right[h, c] += th * z[i, base + c]
    return dz, da_left, da_right


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

class Node:
    __slots__ = ("op", "parents", "aux", "name", "shape", "value", "grad", "cache")

    def __init__(self, op, parents=(), aux=None, name=None, shape=None):
        self.op = op
        self.parents = tuple(parents)
        self.aux = aux or {}
        self.name = name
        self.shape = shape
        self.value = None
        self.grad = None
        self.cache = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Node {self.op}{tag}>"


class Tape:
    """Computation graph with creation-order evaluation and exact-reverse
    backward.  Leaf values are bound by name and held by reference, so callers
    may update parameter arrays in place between forward passes."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaves: dict[str, Node] = {}

    # -- construction -------------------------------------------------------

    def _add(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    def _leaf(self, op, name, shape):
        if name in self._leaves:
            raise InputError(f"duplicate leaf name {name!r}")
        node = self._add(Node(op, name=name, shape=tuple(shape)))
        self._leaves[name] = node
        return node

    def parameter(self, name: str, shape) -> Node:
        return self._leaf("parameter", name, shape)

    def input(self, name: str, shape) -> Node:
        return self._leaf("input", name, shape)

    def bind(self, name: str, value: np.ndarray) -> None:
        node = self._leaves.get(name)
        if node is None:
            raise InputError(f"unknown leaf {name!r}")
        value = np.asarray(value, dtype=np.float64)
        if value.shape != node.shape:
            raise InputError(f"leaf {name!r} expects shape {node.shape}, got {value.shape}")
        node.value = value

    def leaf(self, name: str) -> Node:
        return self._leaves[name]

    def dense_linear(self, x: Node, w: Node, transpose_w: bool = False) -> Node:
        xr, xc = x.shape
        if transpose_w:
            out_dim, inner = w.shape
        else:
            inner, out_dim = w.shape
        if inner != xc:
            raise InputError(f"dense-linear inner dims differ: {xc} vs {inner}")
        return self._add(Node("dense-linear", (x, w),
                              aux={"transpose_w": transpose_w}, shape=(xr, out_dim)))

    def leaky_rectifier(self, x: Node, slope: float = 0.2) -> Node:
        return self._add(Node("leaky-rectifier", (x,), aux={"slope": float(slope)},
                              shape=x.shape))

    def exponential_linear(self, x: Node, alpha: float = 1.0) -> Node:
        return self._add(Node("exponential-linear", (x,), aux={"alpha": float(alpha)},
                              shape=x.shape))

    def neighbor_attention(self, z: Node, attn: Node, structure: NeighborhoodStructure,
                           slope: float = 0.2) -> Node:
        heads, two_hd = attn.shape
        if two_hd % 2:
            raise InputError("attention vectors must have even length (left/right halves)")
        hd = two_hd // 2
        if z.shape != (structure.vertex_count, heads * hd):
            raise InputError(
                f"attention expects features ({structure.vertex_count}, {heads * hd}), "
                f"got {z.shape}"
            )
        return self._add(Node("neighbor-attention-softmax-aggregate", (z, attn),
                              aux={"structure": structure, "slope": float(slope),
                                   "heads": heads, "head_dim": hd},
                              shape=z.shape))

    def row_l2_normalize(self, x: Node) -> Node:
        return self._add(Node("row-l2-normalize", (x,), shape=x.shape))

    def temperature_softmax(self, x: Node, tau: float) -> Node:
        if tau <= 0:
            raise InputError("temperature must be positive")
        return self._add(Node("temperature-softmax", (x,), aux={"tau": float(tau)},
                              shape=x.shape))

    def cross_entropy_mean(self, probs: Node, labels: np.ndarray,
                           rows: np.ndarray | None = None) -> Node:
        labels = np.asarray(labels, dtype=np.int64)
        rows = None if rows is None else np.asarray(rows, dtype=np.int64)
        count = probs.shape[0] if rows is None else rows.shape[0]
        if labels.shape[0] != count:
            raise InputError(f"{count} rows selected but {labels.shape[0]} labels given")
        if count == 0:
            raise InputError("cross-entropy over an empty row set")
        return self._add(Node("cross-entropy-mean", (probs,),
                              aux={"labels": labels, "rows": rows}, shape=()))

    def entropy_mean(self, probs: Node, rows: np.ndarray | None = None) -> Node:
        rows = None if rows is None else np.asarray(rows, dtype=np.int64)
        if rows is not None and rows.shape[0] == 0:
            raise InputError("entropy over an empty row set")
        return self._add(Node("entropy-mean", (probs,), aux={"rows": rows}, shape=()))

    def scalar_add(self, a: Node, b: Node) -> Node:
        if a.shape != () or b.shape != ():
            raise InputError("scalar-add operands must be scalar")
        return self._add(Node("scalar-add", (a, b), shape=()))

    def scalar_scale(self, x: Node, factor: float) -> Node:
        if x.shape != ():
            raise InputError("scalar-scale operand must be scalar")
        return self._add(Node("scalar-scale", (x,), aux={"factor": float(factor)},
                              shape=()))

    def gradient_reverse(self, x: Node, kappa: float) -> Node:
        if kappa < 0:
            raise InputError("gradient-reverse strength must be non-negative")
        return self._add(Node("gradient-reverse", (x,), aux={"kappa": float(kappa)},
                              shape=x.shape))

    def head_concat(self, parts: list[Node]) -> Node:
        if not parts:
            raise InputError("head-concat needs at least one part")
        rows = parts[0].shape[0]
        for p in parts:
            if len(p.shape) != 2 or p.shape[0] != rows:
                raise InputError("head-concat parts must share the row count")
        width = sum(p.shape[1] for p in parts)
        return self._add(Node("head-concat", tuple(parts), shape=(rows, width)))

    # -- evaluation ---------------------------------------------------------

    def forward(self, bindings: dict[str, np.ndarray] | None = None) -> None:
        if bindings:
            for name, value in bindings.items():
                self.bind(name, value)
        for node in self.nodes:
            if node.op in ("parameter", "input"):
                if node.value is None:
                    raise InputError(f"leaf {node.name!r} is unbound")
                continue
            _forward_node(node)

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Reverse-mode sweep from a scalar loss; returns parameter gradients."""
        if loss.shape != ():
            raise InputError("backward requires a scalar loss node")
        if loss.value is None:
            raise InputError("run forward before backward")
        self._sweep(loss, np.float64(1.0))
        grads: dict[str, np.ndarray] = {}
        for name, node in self._leaves.items():
            if node.op == "parameter":
                grads[name] = np.zeros(node.shape) if node.grad is None else node.grad
        return grads

    def _sweep(self, start: Node, seed) -> None:
        for node in self.nodes:
            node.grad = None
        start.grad = seed
        for node in reversed(self.nodes):
            if node.grad is None or node.op in ("parameter", "input"):
                continue
            _backward_node(node)


def _accum(node: Node, delta) -> None:
    # First touch adopts the delta (callers hand over fresh arrays or views of
    # arrays that are never mutated afterwards); later touches allocate.
    node.grad = delta if node.grad is None else node.grad + delta


def _forward_node(node: Node) -> None:
    op = node.op
    parents = node.parents
    if op == "dense-linear":
        x, w = parents[0].value, parents[1].value
        node.value = x @ w.T if node.aux["transpose_w"] else x @ w
    elif op == "leaky-rectifier":
        x = parents[0].value
        node.value = np.where(x > 0.0, x, node.aux["slope"] * x)
    elif op == "exponential-linear":
        x = parents[0].value
        alpha = node.aux["alpha"]
        node.value = np.where(x > 0.0, x, alpha * np.expm1(np.minimum(x, 0.0)))
    elif op == "neighbor-attention-softmax-aggregate":
        z = np.ascontiguousarray(parents[0].value)
        attn = parents[1].value
        aux = node.aux
        hd = aux["head_dim"]
        a_left = np.ascontiguousarray(attn[:, :hd])
        a_right = np.ascontiguousarray(attn[:, hd:])
        st = aux["structure"]
        out, alpha, s, t = _attention_forward(
            z, a_left, a_right, st.indptr, st.dst, aux["slope"], aux["heads"], hd
        )
        node.value = out
        node.cache = (z, a_left, a_right, alpha, s, t)
    elif op == "row-l2-normalize":
        x = parents[0].value
        norms = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
        denom = norms + NORM_EPS
        node.value = x / denom
        node.cache = (norms, denom)
    elif op == "temperature-softmax":
        x = parents[0].value / node.aux["tau"]
        x = x - x.max(axis=1, keepdims=True)
        e = np.exp(x)
        node.value = e / e.sum(axis=1, keepdims=True)
    elif op == "cross-entropy-mean":
        probs = parents[0].value
        rows, labels = node.aux["rows"], node.aux["labels"]
        rows_idx = np.arange(probs.shape[0]) if rows is None else rows
        picked = probs[rows_idx, labels]
        node.value = np.float64(-np.mean(np.log(np.maximum(picked, CLAMP_EPS))))
    elif op == "entropy-mean":
        probs = parents[0].value
        rows = node.aux["rows"]
        block = probs if rows is None else probs[rows]
        plogp = np.zeros_like(block)
        positive = block > 0.0
        plogp[positive] = block[positive] * np.log(block[positive])
        node.value = np.float64(-plogp.sum() / block.shape[0])
    elif op == "scalar-add":
        node.value = np.float64(parents[0].value + parents[1].value)
    elif op == "scalar-scale":
        node.value = np.float64(node.aux["factor"] * parents[0].value)
    elif op == "gradient-reverse":
        node.value = parents[0].value
    elif op == "head-concat":
        node.value = np.concatenate([p.value for p in parents], axis=1)
    else:
        raise InputError(f"unknown op kind {op!r}")


def _backward_node(node: Node) -> None:
    op = node.op
    g = node.grad
    parents = node.parents
    if op == "dense-linear":
        x_node, w_node = parents
        x, w = x_node.value, w_node.value
        if node.aux["transpose_w"]:
            _accum(x_node, g @ w)
            _accum(w_node, g.T @ x)
        else:
            _accum(x_node, g @ w.T)
            _accum(w_node, x.T @ g)
    elif op == "leaky-rectifier":
        x = parents[0].value
        _accum(parents[0], np.where(x > 0.0, g, node.aux["slope"] * g))
    elif op == "exponential-linear":
        x = parents[0].value
        alpha = node.aux["alpha"]
        _accum(parents[0], np.where(x > 0.0, g, g * (node.value + alpha)))
    elif op == "neighbor-attention-softmax-aggregate":
        z, a_left, a_right, alpha, s, t = node.cache
        aux = node.aux
        st = aux["structure"]
        dz, da_l, da_r = _attention_backward(
            np.ascontiguousarray(g), z, a_left, a_right, alpha, s, t,
            st.indptr, st.dst, aux["slope"], aux["heads"], aux["head_dim"]
        )
        _accum(parents[0], dz)
        _accum(parents[1], np.concatenate([da_l, da_r], axis=1))
    elif op == "row-l2-normalize":
        x = parents[0].value
        norms, denom = node.cache
        dotted = np.sum(g * x, axis=1, keepdims=True)
        safe = np.where(norms > 0.0, norms, 1.0)
        correction = np.where(norms > 0.0, dotted / (safe * denom * denom), 0.0)
        _accum(parents[0], g / denom - x * correction)
    elif op == "temperature-softmax":
        y = node.value
        dotted = np.sum(g * y, axis=1, keepdims=True)
        _accum(parents[0], y * (g - dotted) / node.aux["tau"])
    elif op == "cross-entropy-mean":
        probs = parents[0].value
        rows, labels = node.aux["rows"], node.aux["labels"]
        rows_idx = np.arange(probs.shape[0]) if rows is None else rows
        dp = np.zeros_like(probs)
        picked = probs[rows_idx, labels]
        live = picked > CLAMP_EPS
        scale = np.zeros_like(picked)
        scale[live] = -1.0 / (picked[live] * rows_idx.shape[0])
        np.add.at(dp, (rows_idx, labels), scale * float(g))
        _accum(parents[0], dp)
    elif op == "entropy-mean":
        probs = parents[0].value
        rows = node.aux["rows"]
        block = probs if rows is None else probs[rows]
        d_block = np.zeros_like(block)
        positive = block > CLAMP_EPS
        d_block[positive] = -(np.log(block[positive]) + 1.0) * (float(g) / block.shape[0])
        if rows is None:
            dp = d_block
        else:
            dp = np.zeros_like(probs)
            np.add.at(dp, rows, d_block)
        _accum(parents[0], dp)
    elif op == "scalar-add":
        _accum(parents[0], np.float64(g))
        _accum(parents[1], np.float64(g))
    elif op == "scalar-scale":
        _accum(parents[0], np.float64(node.aux["factor"] * g))
    elif op == "gradient-reverse":
        _accum(parents[0], -node.aux["kappa"] * g)
    elif op == "head-concat":
        offset = 0
        for p in parents:
            width = p.shape[1]
            _accum(p, g[:, offset:offset + width])
            offset += width
    else:
        raise InputError(f"unknown op kind {op!r}")


# ---------------------------------------------------------------------------
# Finite-difference checking
# ---------------------------------------------------------------------------

def relative_gradient_error(tape: Tape, out: Node, leaf_names: list[str],
                            probe: np.ndarray | float | None = None,
                            h: float = 1e-5,
                            expected_scale: dict[str, float] | None = None) -> float:
    """Max relative error of analytic vs central-difference gradients.

    The scalar under test is ``sum(probe * out)`` (probe defaults to 1 for
    scalar nodes).  ``expected_scale`` states, per leaf, the factor the
    analytic gradient is contracted to carry relative to the value function
    (-kappa downstream of a gradient-reverse node); the numeric gradient is
    multiplied by it before comparing.  Error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    tape.forward()
    if probe is None:
        if out.shape != ():
            raise InputError("non-scalar node needs an explicit probe")
        probe = 1.0
    seed = np.float64(probe) if out.shape == () else np.asarray(probe, dtype=np.float64)
    tape._sweep(out, seed)
    analytic = {}
    for name in leaf_names:
        node = tape.leaf(name)
        analytic[name] = (np.zeros(node.shape) if node.grad is None
                          else np.array(node.grad, copy=True))

    def objective() -> float:
        tape.forward()
        if out.shape == ():
            return float(out.value) * float(probe)
        return float(np.sum(seed * out.value))

    worst = 0.0
    for name in leaf_names:
        node = tape.leaf(name)
        scale = 1.0 if expected_scale is None else expected_scale.get(name, 1.0)
        flat = node.value.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for idx in range(flat.shape[0]):
            keep = flat[idx]
            flat[idx] = keep + h
            up = objective()
            flat[idx] = keep - h
            down = objective()
            flat[idx] = keep
            numeric = scale * (up - down) / (2.0 * h)
            err = abs(float(grad_flat[idx]) - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    tape.forward()
    return worst


def _ring_structure(n: int) -> NeighborhoodStructure:
    indptr = np.arange(0, 2 * n + 1, 2, dtype=np.int64)
    indices = np.empty(2 * n, dtype=np.int64)
    for i in range(n):
        pair = sorted(((i - 1) % n, (i + 1) % n))
        indices[2 * i], indices[2 * i + 1] = pair
    return NeighborhoodStructure.from_neighbor_lists(indptr, indices)


def _attention_kink_distance(z, attn, structure: NeighborhoodStructure,
                             heads: int, hd: int) -> float:
    a_left, a_right = attn[:, :hd], attn[:, hd:]
    worst = np.inf
    for h in range(heads):
        block = z[:, h * hd:(h + 1) * hd]
        s = block @ a_left[h]
        t = block @ a_right[h]
        for i in range(structure.vertex_count):
            for k in range(structure.indptr[i], structure.indptr[i + 1]):
                worst = min(worst, abs(s[i] + t[structure.dst[k]]))
    return float(worst)


def grad_check(op_kind: str, rng: np.random.Generator, h: float = 1e-5) -> float:
    """Finite-difference check of one op kind on random inputs.

    Inputs are resampled away from kinks (within 1e-6) where the op has one.
    Returns the max relative error over all input coordinates.
    """
    tape = Tape()
    probe = None

    if op_kind in ("parameter", "input"):
        x = (tape.parameter if op_kind == "parameter" else tape.input)("x", (4, 3))
        tape.bind("x", rng.standard_normal((4, 3)))
        out, leaves = x, ["x"]
        probe = rng.standard_normal((4, 3))
    elif op_kind == "dense-linear":
        x = tape.input("x", (5, 4))
        w = tape.parameter("w", (4, 3))
        tape.bind("x", rng.standard_normal((5, 4)))
        tape.bind("w", rng.standard_normal((4, 3)))
        out, leaves = tape.dense_linear(x, w), ["x", "w"]
        probe = rng.standard_normal((5, 3))
    elif op_kind == "leaky-rectifier":
        vals = rng.standard_normal((5, 4))
        while np.any(np.abs(vals) < 1e-6):
            vals = rng.standard_normal((5, 4))
        x = tape.input("x", (5, 4))
        tape.bind("x", vals)
        out, leaves = tape.leaky_rectifier(x, 0.2), ["x"]
        probe = rng.standard_normal((5, 4))
    elif op_kind == "exponential-linear":
        x = tape.input("x", (5, 4))
        tape.bind("x", rng.standard_normal((5, 4)))
        out, leaves = tape.exponential_linear(x), ["x"]
        probe = rng.standard_normal((5, 4))
    elif op_kind == "neighbor-attention-softmax-aggregate":
        structure = _ring_structure(5)
        heads, hd = 2, 3
        z = tape.input("z", (5, heads * hd))
        attn = tape.parameter("a", (heads, 2 * hd))
        while True:
            zv = rng.standard_normal((5, heads * hd))
            av = rng.standard_normal((heads, 2 * hd))
            if _attention_kink_distance(zv, av, structure, heads, hd) > 1e-6:
                break
        tape.bind("z", zv)
        tape.bind("a", av)
        out, leaves = tape.neighbor_attention(z, attn, structure), ["z", "a"]
        probe = rng.standard_normal((5, heads * hd))
    elif op_kind == "row-l2-normalize":
        x = tape.input("x", (5, 4))
        tape.bind("x", rng.standard_normal((5, 4)) + 0.5)
        out, leaves = tape.row_l2_normalize(x), ["x"]
        probe = rng.standard_normal((5, 4))
    elif op_kind == "temperature-softmax":
        x = tape.input("x", (5, 4))
        tape.bind("x", rng.uniform(-1.0, 1.0, (5, 4)))
        out, leaves = tape.temperature_softmax(x, 0.05), ["x"]
        probe = rng.standard_normal((5, 4))
    elif op_kind == "cross-entropy-mean":
        x = tape.input("x", (5, 4))
        tape.bind("x", rng.uniform(0.1, 0.9, (5, 4)))
        out, leaves = tape.cross_entropy_mean(x, rng.integers(0, 4, size=5)), ["x"]
    elif op_kind == "entropy-mean":
        x = tape.input("x", (5, 4))
        tape.bind("x", rng.uniform(0.1, 0.9, (5, 4)))
        out, leaves = tape.entropy_mean(x), ["x"]
    elif op_kind == "scalar-add":
        x = tape.input("x", (3, 3))
        tape.bind("x", rng.uniform(0.1, 0.9, (3, 3)))
        a = tape.entropy_mean(x)
        b = tape.cross_entropy_mean(x, rng.integers(0, 3, size=3))
        out, leaves = tape.scalar_add(a, b), ["x"]
    elif op_kind == "scalar-scale":
        x = tape.input("x", (3, 3))
        tape.bind("x", rng.uniform(0.1, 0.9, (3, 3)))
        out, leaves = tape.scalar_scale(tape.entropy_mean(x), -1.7), ["x"]
    elif op_kind == "gradient-reverse":
        kappa = 0.7
        x = tape.input("x", (4, 3))
        tape.bind("x", rng.uniform(0.1, 0.9, (4, 3)))
        out, leaves = tape.gradient_reverse(x, kappa), ["x"]
        probe = rng.standard_normal((4, 3))
        # Forward ignores the reversal; the contract multiplies the numeric
        # gradient by -kappa before comparison.
        return relative_gradient_error(tape, out, leaves, probe, h,
                                       expected_scale={"x": -kappa})
    elif op_kind == "head-concat":
        x = tape.input("x", (4, 2))
        y = tape.input("y", (4, 3))
        tape.bind("x", rng.standard_normal((4, 2)))
        tape.bind("y", rng.standard_normal((4, 3)))
        out, leaves = tape.head_concat([x, y]), ["x", "y"]
        probe = rng.standard_normal((4, 5))
    else:
        raise InputError(f"unknown op kind {op_kind!r}")

    return relative_gradient_error(tape, out, leaves, probe, h)
