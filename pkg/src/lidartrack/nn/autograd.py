"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray together with the recipe that produced it: its
parent Tensors and a backward function mapping the output gradient to one
gradient per parent (or None for parents that do not need one).  Calling
backward() on a scalar Tensor walks the recorded graph in reverse
topological order and accumulates gradients into every Tensor that
requires them.

The op set is deliberately small: affine layers, ReLU, row-wise max
pooling, row repetition, column concat/slice, elementwise add/sub/scale,
and multiplication by a constant matrix.  That is enough to express every
network in this package while keeping each backward rule a few lines of
numpy.  New ops can be added from outside by constructing a Tensor with
explicit parents and backward_fn, which the gradient-checker tests use to
inject a deliberately broken rule.

Gradients for ReLU at exactly zero and for ties in max pooling use fixed
conventions: zero subgradient, and the lowest row index wins.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "backward",
    "zero_grad",
    "linear",
    "relu",
    "maxpool_points",
    "segment_maxpool",
    "repeat_rows",
    "concat_cols",
    "slice_cols",
    "add",
    "sub",
    "scale",
    "add_const",
    "matmul_const",
]

BackwardFn = Callable[[np.ndarray], tuple]


class Tensor:
    """An ndarray plus the graph edge that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward_fn: Optional[BackwardFn] = None,
        op: str = "leaf",
    ):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, requires_grad={self.requires_grad})"


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate gradients of a scalar root into every requiring Tensor."""
    if root.data.shape != ():
        raise ValueError(f"backward needs a scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        raise ValueError("root does not depend on any parameter")
    root.grad = np.ones((), dtype=root.data.dtype)
    for node in reversed(_topo_order(root)):
        if node.backward_fn is None or node.grad is None:
            continue
        parent_grads = node.backward_fn(node.grad)
        if len(parent_grads) != len(node.parents):
            raise ValueError(f"op {node.op!r} returned {len(parent_grads)} gradients "
                             f"for {len(node.parents)} parents")
        for parent, g in zip(node.parents, parent_grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def _as2d(t: Tensor, op: str) -> None:
    if t.data.ndim != 2:
        raise ValueError(f"{op} expects a 2-d input, got shape {t.data.shape}")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map of row vectors: x @ w + b, with w of shape (in, out)."""
    _as2d(x, "linear")
    if w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"linear shape mismatch: x {x.data.shape} vs w {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ValueError(f"linear bias shape {b.data.shape} does not match w {w.data.shape}")
    out = x.data @ w.data + b.data

    def bw(g: np.ndarray):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        gb = g.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return Tensor(out, parents=(x, w, b), backward_fn=bw, op="linear")


def relu(x: Tensor) -> Tensor:
    # np.maximum keeps NaN visible instead of flushing it to 0, so a
    # poisoned parameter still surfaces as a non-finite loss downstream
    mask = x.data > 0
    return Tensor(
        np.maximum(x.data, 0.0),
        parents=(x,),
        backward_fn=lambda g: (g * mask,),
        op="relu",
    )


def segment_maxpool(x: Tensor, segments: int) -> Tensor:
    """Per-column max over each of `segments` equal consecutive row blocks."""
    _as2d(x, "segment_maxpool")
    rows, cols = x.data.shape
    if rows == 0:
        raise ValueError("segment_maxpool on an empty input")
    if segments < 1 or rows % segments != 0:
        raise ValueError(f"{rows} rows do not split into {segments} equal segments")
    n = rows // segments
    blocks = x.data.reshape(segments, n, cols)
    arg = blocks.argmax(axis=1)  # ties resolve to the lowest row
    out = np.take_along_axis(blocks, arg[:, None, :], axis=1)[:, 0, :]

    def bw(g: np.ndarray):
        gx = np.zeros_like(blocks)
        np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
        return (gx.reshape(rows, cols),)

    return Tensor(out, parents=(x,), backward_fn=bw, op="segment_maxpool")


def maxpool_points(x: Tensor) -> Tensor:
    """Column-wise max over all rows, keeping a (1, C) shape."""
    return segment_maxpool(x, 1)


def repeat_rows(x: Tensor, k: int) -> Tensor:
    """Repeat each row k times consecutively: (B, C) -> (B * k, C)."""
    _as2d(x, "repeat_rows")
    if k < 1:
        raise ValueError("repeat count must be positive")
    rows, cols = x.data.shape
    out = np.repeat(x.data, k, axis=0)

    def bw(g: np.ndarray):
        return (g.reshape(rows, k, cols).sum(axis=1),)

    return Tensor(out, parents=(x,), backward_fn=bw, op="repeat_rows")


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    _as2d(a, "concat_cols")
    _as2d(b, "concat_cols")
    if a.data.shape[0] != b.data.shape[0]:
        raise ValueError(f"row mismatch: {a.data.shape} vs {b.data.shape}")
    ca = a.data.shape[1]
    out = np.hstack([a.data, b.data])

    def bw(g: np.ndarray):
        return g[:, :ca], g[:, ca:]

    return Tensor(out, parents=(a, b), backward_fn=bw, op="concat_cols")


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    _as2d(x, "slice_cols")
    if not (0 <= lo < hi <= x.data.shape[1]):
        raise ValueError(f"column slice [{lo}, {hi}) out of range for shape {x.data.shape}")
    out = x.data[:, lo:hi].copy()

    def bw(g: np.ndarray):
        gx = np.zeros_like(x.data)
        gx[:, lo:hi] = g
        return (gx,)

    return Tensor(out, parents=(x,), backward_fn=bw, op="slice_cols")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    return Tensor(a.data + b.data, parents=(a, b), backward_fn=lambda g: (g, g), op="add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub shape mismatch: {a.data.shape} vs {b.data.shape}")
    return Tensor(a.data - b.data, parents=(a, b), backward_fn=lambda g: (g, -g), op="sub")


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return Tensor(x.data * s, parents=(x,), backward_fn=lambda g: (g * s,), op="scale")


def add_const(x: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=x.data.dtype)
    out = x.data + c
    if out.shape != x.data.shape:
        raise ValueError("add_const must not broadcast beyond the input shape")
    return Tensor(out, parents=(x,), backward_fn=lambda g: (g,), op="add_const")


def matmul_const(x: Tensor, m: np.ndarray) -> Tensor:
    """Row vectors through a constant matrix: x @ m.T (m maps in -> out)."""
    _as2d(x, "matmul_const")
    m = np.asarray(m, dtype=x.data.dtype)
    if m.ndim != 2 or m.shape[1] != x.data.shape[1]:
        raise ValueError(f"matmul_const shape mismatch: x {x.data.shape} vs m {m.shape}")
    return Tensor(x.data @ m.T, parents=(x,), backward_fn=lambda g: (g @ m,), op="matmul_const")
