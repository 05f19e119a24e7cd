"""Minimal reverse-mode autodiff over dense float64 arrays.

Define-by-run: every forward pass records operations onto a fresh Tape in
execution order, which is already a valid topological order. The backward
pass replays the tape in reverse exactly once, accumulating gradients into
the participating arrays.

Only the primitives needed by the models and losses are implemented.
Broadcasting in elementwise ops is limited to scalars, equal shapes, and
the row (1, n) / column (batch, 1) patterns required by bias adds and
per-concept probability mixing.
"""

from __future__ import annotations

import numpy as np


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self):
        self._entries = []  # (output, parents, backward closure)
        self._n_nodes = 0

    def _new_node_id(self) -> int:
        nid = self._n_nodes
        self._n_nodes += 1
        return nid

    def leaf(self, values) -> "DiffArray":
        return DiffArray(values, self)

    def record(self, out, parents, backward) -> None:
        self._entries.append((out, parents, backward))

    def backward(self, root: "DiffArray") -> None:
        """Populate gradients for every array reachable from `root`."""
        if root.values.size != 1:
            raise ValueError(
                f"backward root must be scalar, got shape {root.values.shape}"
            )
        root.grad = np.ones_like(root.values)
        for out, _parents, backward in reversed(self._entries):
            if out.grad is not None:
                backward(out.grad)


class DiffArray:
    """Dense float64 array participating in a computation graph."""

    __slots__ = ("values", "grad", "tape", "node_id")

    def __init__(self, values, tape: Tape):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.tape = tape
        self.node_id = tape._new_node_id()

    @property
    def shape(self):
        return self.values.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g


def _lift(x, tape: Tape) -> DiffArray:
    if isinstance(x, DiffArray):
        return x
    return tape.leaf(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gdim, sdim) in enumerate(zip(g.shape, shape)):
        if sdim == 1 and gdim != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: DiffArray, b: DiffArray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# Primitives


def matmul(a: DiffArray, b: DiffArray) -> DiffArray:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} x {b.shape}")
    out = DiffArray(a.values @ b.values, a.tape)

    def backward(g):
        a.accumulate(g @ b.values.T)
        b.accumulate(a.values.T @ g)

    a.tape.record(out, (a, b), backward)
    return out


def add(a: DiffArray, b) -> DiffArray:
    b = _lift(b, a.tape)
    _check_broadcast(a, b, "add")
    out = DiffArray(a.values + b.values, a.tape)

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    a.tape.record(out, (a, b), backward)
    return out


def sub(a: DiffArray, b) -> DiffArray:
    a = _lift(a, b.tape if isinstance(b, DiffArray) else a.tape)
    b = _lift(b, a.tape)
    _check_broadcast(a, b, "sub")
    out = DiffArray(a.values - b.values, a.tape)

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(-_unbroadcast(g, b.shape))

    a.tape.record(out, (a, b), backward)
    return out


def mul(a: DiffArray, b) -> DiffArray:
    b = _lift(b, a.tape)
    _check_broadcast(a, b, "mul")
    out = DiffArray(a.values * b.values, a.tape)

    def backward(g):
        a.accumulate(_unbroadcast(g * b.values, a.shape))
        b.accumulate(_unbroadcast(g * a.values, b.shape))

    a.tape.record(out, (a, b), backward)
    return out


def scale(a: DiffArray, s: float) -> DiffArray:
    s = float(s)
    out = DiffArray(a.values * s, a.tape)

    def backward(g):
        a.accumulate(g * s)

    a.tape.record(out, (a,), backward)
    return out


def leaky_relu(a: DiffArray, slope: float = 0.01) -> DiffArray:
    pos = a.values >= 0
    out = DiffArray(np.where(pos, a.values, slope * a.values), a.tape)

    def backward(g):
        a.accumulate(g * np.where(pos, 1.0, slope))

    a.tape.record(out, (a,), backward)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Split at zero so neither branch exponentiates a large positive value.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: DiffArray) -> DiffArray:
    s = _sigmoid(a.values)
    out = DiffArray(s, a.tape)

    def backward(g):
        a.accumulate(g * s * (1.0 - s))

    a.tape.record(out, (a,), backward)
    return out


def concat(arrays: list[DiffArray]) -> DiffArray:
    """Concatenate along the last axis."""
    if not arrays:
        raise ValueError("concat: empty operand list")
    tape = arrays[0].tape
    out = DiffArray(np.concatenate([a.values for a in arrays], axis=-1), tape)
    widths = [a.shape[-1] for a in arrays]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for a, lo, hi in zip(arrays, offsets[:-1], offsets[1:]):
            a.accumulate(g[..., lo:hi])

    tape.record(out, tuple(arrays), backward)
    return out


def asum(a: DiffArray) -> DiffArray:
    out = DiffArray(a.values.sum(), a.tape)

    def backward(g):
        a.accumulate(np.broadcast_to(g, a.shape).copy())

    a.tape.record(out, (a,), backward)
    return out


def amean(a: DiffArray) -> DiffArray:
    return scale(asum(a), 1.0 / a.values.size)


def stop_gradient(a: DiffArray) -> DiffArray:
    # Values pass through; nothing is recorded, so backward contributes zero.
    return DiffArray(a.values.copy(), a.tape)


# ---------------------------------------------------------------------------
# Losses (all reduce to the batch mean)


def softmax_cross_entropy(logits: DiffArray, labels: np.ndarray) -> DiffArray:
    labels = np.asarray(labels)
    if logits.values.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(
            f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}"
        )
    n, n_classes = logits.shape
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"softmax_cross_entropy: class index out of range [0, {n_classes})")
    z = logits.values
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), labels].mean()
    out = DiffArray(loss, logits.tape)

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        logits.accumulate(g * p / n)

    logits.tape.record(out, (logits,), backward)
    return out


def bce_with_logits(
    logits: DiffArray, targets: np.ndarray, weights: np.ndarray | None = None
) -> DiffArray:
    """Binary cross-entropy from logits, optionally weighting the
    positive-class term per concept (weights broadcast over the batch)."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ValueError(f"bce: logits {logits.shape} vs targets {targets.shape}")
    if not np.isin(targets, (0.0, 1.0)).all():
        raise ValueError("bce: targets must be in {0, 1}")
    if weights is None:
        w = 1.0
    else:
        w = np.asarray(weights, dtype=np.float64)
        if (w <= 0).any():
            raise ValueError("bce: positive-class weights must be > 0")
    z = logits.values
    # softplus(z) = log(1 + e^z), computed without overflow
    elem = w * targets * np.logaddexp(0.0, -z) + (1.0 - targets) * np.logaddexp(0.0, z)
    out = DiffArray(elem.mean(), logits.tape)
    size = elem.size

    def backward(g):
        dz = (1.0 - targets) * _sigmoid(z) - w * targets * _sigmoid(-z)
        logits.accumulate(g * dz / size)

    logits.tape.record(out, (logits,), backward)
    return out
