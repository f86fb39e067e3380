"""Reverse-mode differentiation on dense float64 tensors.

Deliberately small: only the operations the ranking model needs, no
broadcasting beyond scalar affine, 64-bit everywhere so gradient checks
can run at tight tolerance.
"""
from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    pass


class EmptySegment(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


class Tensor:
    """Dense n-d value, optionally tracked for gradients.

    Tensors created by primitives keep references to their parents and a
    local backward closure; ``backward`` linearizes the graph into a Tape
    and replays it in reverse.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


def _tracked(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _tracked(*parents):
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


class Tape:
    """Topologically ordered record of one computation, for one backward pass."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every requires_grad tensor reachable from ``loss``.

    Gradients accumulate additively, both across shared uses inside one
    graph and across repeated backward calls; callers zero grads between
    optimizer steps.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    tape = Tape.from_root(loss)
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad += g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None:
                continue
            acc = adjoint.get(id(parent))
            if acc is None:
                adjoint[id(parent)] = pg.copy()
            else:
                acc += pg


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"div: {a.shape} vs {b.shape}")
    return _result(
        a.data / b.data,
        (a, b),
        lambda g: (g / b.data, -g * a.data / (b.data * b.data)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    return _result(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat of zero tensors")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0
    scale = np.where(mask, 1.0, slope)
    return _result(x.data * scale, (x,), lambda g: (g * scale,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def affine(x: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """Scalar affine map scale * x + shift; the only broadcasting allowed."""
    return _result(x.data * scale + shift, (x,), lambda g: (g * scale,))


def sum_all(x: Tensor) -> Tensor:
    return _result(
        np.array([[x.data.sum()]]),
        (x,),
        lambda g: (np.full_like(x.data, float(g.reshape(-1)[0])),),
    )


def gather_rows(x: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    if x.data.ndim != 2:
        raise ShapeMismatch(f"gather_rows needs a matrix, got {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeMismatch(f"gather_rows index out of range for {x.shape[0]} rows")

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result(x.data[idx], (x,), back)


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply row i of x by w[i]; w is a column vector (n, 1)."""
    if x.data.ndim != 2 or w.shape != (x.shape[0], 1):
        raise ShapeMismatch(f"scale_rows: {x.shape} by {w.shape}")
    return _result(
        x.data * w.data,
        (x, w),
        lambda g: (g * w.data, (g * x.data).sum(axis=1, keepdims=True)),
    )


def _check_segments(segments, n_rows, num_segments):
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape != (n_rows,):
        raise ShapeMismatch(f"segments shape {seg.shape} for {n_rows} rows")
    if n_rows == 0:
        raise EmptySegment("no rows to segment")
    if np.any(np.diff(seg) < 0):
        raise ShapeMismatch("segments must be sorted")
    if seg.min() < 0 or seg.max() >= num_segments:
        raise ShapeMismatch("segment id out of range")
    return seg


def segment_softmax(x: Tensor, segments, num_segments: int) -> Tensor:
    """Softmax over rows sharing a segment id; x is a column vector (n, 1)."""
    if x.data.ndim != 2 or x.shape[1] != 1:
        raise ShapeMismatch(f"segment_softmax needs (n, 1), got {x.shape}")
    seg = _check_segments(segments, x.shape[0], num_segments)
    v = x.data[:, 0]
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, seg, v)
    e = np.exp(v - seg_max[seg])
    denom = np.zeros(num_segments)
    np.add.at(denom, seg, e)
    y = (e / denom[seg])[:, None]

    def back(g):
        gy = g[:, 0] * y[:, 0]
        dot = np.zeros(num_segments)
        np.add.at(dot, seg, gy)
        return ((gy - y[:, 0] * dot[seg])[:, None],)

    return _result(y, (x,), back)


def segment_reduce(x: Tensor, segments, num_segments: int, mode: str = "mean") -> Tensor:
    """Reduce rows by segment id into a (num_segments, d) matrix.

    Empty segments are zero under sum and an error under mean/max; max
    routes the gradient to the first argmax row of each segment.
    """
    if x.data.ndim != 2:
        raise ShapeMismatch(f"segment_reduce needs a matrix, got {x.shape}")
    seg = _check_segments(segments, x.shape[0], num_segments)
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    if mode in ("mean", "max") and np.any(counts == 0):
        raise EmptySegment(f"{mode} over an empty segment")

    if mode in ("sum", "mean"):
        out = np.zeros((num_segments, x.shape[1]))
        np.add.at(out, seg, x.data)
        if mode == "mean":
            out /= np.maximum(counts, 1.0)[:, None]

        def back(g):
            gx = g[seg]
            if mode == "mean":
                gx = gx / counts[seg][:, None]
            return (gx,)

        return _result(out, (x,), back)

    if mode == "max":
        out = np.full((num_segments, x.shape[1]), -np.inf)
        np.maximum.at(out, seg, x.data)
        # first row achieving the max per (segment, column), for tie routing
        winners = np.full((num_segments, x.shape[1]), -1, dtype=np.int64)
        for row in range(x.shape[0] - 1, -1, -1):
            s = seg[row]
            hit = x.data[row] == out[s]
            winners[s][hit] = row

        def back(g):
            gx = np.zeros_like(x.data)
            cols = np.arange(x.shape[1])
            for s in range(num_segments):
                gx[winners[s], cols] += g[s]
            return (gx,)

        return _result(out, (x,), back)

    raise ValueError(f"unknown reduce mode {mode!r}")
