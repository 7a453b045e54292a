"""Reverse-mode automatic differentiation on dense float64 arrays.

A :class:`Tape` records operations executed while it is active (inside a
``with`` block).  Calling :meth:`Tape.gradient` walks the recording backwards
and accumulates vector-Jacobian products into per-leaf gradients.  Tensors are
plain float64 numpy arrays with an optional link to their tape node; outside
an active tape every operation is ordinary numpy and costs nothing extra.

A tape is single-writer and single-threaded.  Anything that needs parallelism
(parallel episodes, batches) owns its own tape.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """Dense n-dimensional float64 value, optionally tracked on a tape.

    ``requires_grad`` marks a leaf whose gradient should be accumulated when
    a tape is active.  ``node`` is the handle of the most recent recording of
    this tensor; it is only meaningful while that tape is alive.
    """

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are python floats or shape-() tensors
    def __add__(self, other):
        return add_scalar(self, other) if _is_number(other) else add(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        return add_scalar(self, -other) if _is_number(other) else sub(self, other)

    def __mul__(self, other):
        return mul_scalar(self, other) if _is_number(other) else mul(self, other)

    def __rmul__(self, other):
        return mul_scalar(self, other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _is_number(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


class Node:
    """One recorded operation: parent links plus a local vector-Jacobian closure."""

    __slots__ = ("tape", "parents", "vjp", "shape")

    def __init__(self, tape, parents, vjp, shape):
        self.tape = tape
        self.parents: tuple[Node | None, ...] = parents
        self.vjp: Callable[[np.ndarray], tuple] = vjp
        self.shape = shape


class Tape:
    """Ordered recording of operations; nodes appear in execution order.

    Execution order is a topological order by construction: an operation can
    only consume tensors that already exist, so every node's parents precede
    it in ``nodes``.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def watch(self, tensor: Tensor) -> Tensor:
        """Register ``tensor`` as a leaf so it receives a gradient even if unused."""
        self._leaf(tensor)
        return tensor

    def _leaf(self, tensor: Tensor) -> Node:
        node = Node(self, (), lambda g: (), tensor.data.shape)
        self.nodes.append(node)
        tensor.node = node
        return node

    def _node_for(self, tensor: Tensor) -> Node | None:
        """Tape node for an input tensor, creating a leaf for watched params."""
        if tensor.node is not None and tensor.node.tape is self:
            return tensor.node
        if tensor.requires_grad:
            return self._leaf(tensor)
        return None

    def record(self, result: Tensor, inputs: Sequence[Tensor], vjp) -> Tensor:
        parents = tuple(self._node_for(t) for t in inputs)
        if any(p is not None for p in parents):
            node = Node(self, parents, vjp, result.data.shape)
            self.nodes.append(node)
            result.node = node
        return result

    def backward(self, loss: Tensor) -> dict[Node, np.ndarray]:
        """One reverse pass from a scalar loss; returns gradients per node.

        Every recorded node reachable from the loss appears in the result;
        watched-but-unreachable leaves map to zeros.
        """
        if loss.data.shape != ():
            raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
        grads: dict[Node, np.ndarray] = {}
        if loss.node is not None and loss.node.tape is self:
            grads[loss.node] = np.ones(())
            for node in reversed(self.nodes):
                g = grads.get(node)
                if g is None:
                    continue
                for parent, pg in zip(node.parents, node.vjp(g)):
                    if parent is None or pg is None:
                        continue
                    if parent in grads:
                        grads[parent] = grads[parent] + pg
                    else:
                        grads[parent] = pg
        for node in self.nodes:
            if node not in grads:
                grads[node] = np.zeros(node.shape)
        return grads

    def gradient(self, loss: Tensor, sources: Iterable[Tensor]) -> list[np.ndarray]:
        """Gradients of a scalar loss with respect to each source tensor."""
        grads = self.backward(loss)
        out = []
        for src in sources:
            if src.node is not None and src.node.tape is self and src.node in grads:
                out.append(grads[src.node])
            else:
                out.append(np.zeros(src.data.shape))
        return out


def backward(tape: Tape, loss: Tensor) -> dict[Node, np.ndarray]:
    """Module-level alias for :meth:`Tape.backward`."""
    return tape.backward(loss)


def _record(result_data, inputs, vjp) -> Tensor:
    out = Tensor(result_data)
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.record(out, inputs, vjp)
    return out


def _check_same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{opname}: shapes {a.data.shape} and {b.data.shape} differ")


def _binary_shapes(a: Tensor, b: Tensor, opname: str) -> None:
    # equal shapes, or one operand is a scalar (shape ())
    if a.data.shape == b.data.shape:
        return
    if a.data.shape == () or b.data.shape == ():
        return
    raise ShapeError(f"{opname}: shapes {a.data.shape} and {b.data.shape} differ")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return np.sum(g) * np.ones(()) if shape == () and g.shape != () else g


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")
    return _record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _record(a.data + float(c), (a,), lambda g: (g,))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _record(y, (a,), lambda g: (g * y,))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed without overflow; derivative is sigmoid."""
    x = a.data
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    s = 1.0 / (1.0 + np.exp(-x))
    return _record(y, (a,), lambda g: (g * s,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


# ---------------------------------------------------------------------------
# structural primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims of {a.data.shape} and {b.data.shape} disagree")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_bias(m: Tensor, v: Tensor) -> Tensor:
    """Row-broadcast add of a length-C vector onto an R-by-C matrix."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"add_bias: got matrix {m.data.shape} and vector {v.data.shape}")
    return _record(m.data + v.data, (m, v), lambda g: (g, g.sum(axis=0)))


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape
    return _record(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    return mul_scalar(sum_all(a), 1.0 / a.data.size)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.data.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a 2-D tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"slice_cols needs a 2-D tensor, got {a.data.shape}")
    cols = a.data.shape[1]

    def vjp(g):
        full = np.zeros((g.shape[0], cols))
        full[:, start:stop] = g
        return (full,)

    return _record(a.data[:, start:stop].copy(), (a,), vjp)


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Pick one column per row of a 2-D tensor; returns a length-R vector."""
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-D tensor, got {a.data.shape}")
    idx = np.asarray(index, dtype=np.intp)
    rows = np.arange(a.data.shape[0])
    shape = a.data.shape

    def vjp(g):
        full = np.zeros(shape)
        full[rows, idx] = g
        return (full,)

    return _record(a.data[rows, idx].copy(), (a,), vjp)


# ---------------------------------------------------------------------------
# softmax family (row-wise on 2-D input, plain on 1-D)


def _as_rows(x: np.ndarray) -> np.ndarray:
    return x[None, :] if x.ndim == 1 else x


def softmax(a: Tensor) -> Tensor:
    """Numerically stabilized softmax; rows of a 2-D input sum to one."""
    if a.data.ndim not in (1, 2):
        raise ShapeError(f"softmax needs a 1-D or 2-D tensor, got {a.data.shape}")
    x = _as_rows(a.data)
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    out = y[0] if a.data.ndim == 1 else y

    def vjp(g):
        gr = _as_rows(g)
        dx = y * (gr - (gr * y).sum(axis=1, keepdims=True))
        return (dx[0] if a.data.ndim == 1 else dx,)

    return _record(out, (a,), vjp)


def log_softmax(a: Tensor) -> Tensor:
    if a.data.ndim not in (1, 2):
        raise ShapeError(f"log_softmax needs a 1-D or 2-D tensor, got {a.data.shape}")
    x = _as_rows(a.data)
    z = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    sm = np.exp(logp)
    out = logp[0] if a.data.ndim == 1 else logp

    def vjp(g):
        gr = _as_rows(g)
        dx = gr - sm * gr.sum(axis=1, keepdims=True)
        return (dx[0] if a.data.ndim == 1 else dx,)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# spatial primitives: valid stride-1 conv with 5x5 kernels, 2x2 max pool


KERNEL = 5


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid (no padding) stride-1 cross-correlation plus per-filter bias.

    ``x`` is CxHxW or NxCxHxW; ``kernels`` is FxCx5x5; ``bias`` is length F.
    """
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d input must be CxHxW or NxCxHxW, got {x.data.shape}")
    kd, bd = kernels.data, bias.data
    if kd.ndim != 4 or kd.shape[2:] != (KERNEL, KERNEL):
        raise ShapeError(f"conv2d kernels must be FxCx{KERNEL}x{KERNEL}, got {kd.shape}")
    n, c, h, w = xd.shape
    f = kd.shape[0]
    if kd.shape[1] != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernels expect {kd.shape[1]}")
    if bd.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {bd.shape} does not match {f} filters")
    if h < KERNEL or w < KERNEL:
        raise ShapeError(f"conv2d: spatial dims {h}x{w} smaller than kernel {KERNEL}")
    ho, wo = h - KERNEL + 1, w - KERNEL + 1

    # im2col: (N, C, Ho, Wo, 5, 5) view -> (N*Ho*Wo, C*25)
    windows = np.lib.stride_tricks.sliding_window_view(xd, (KERNEL, KERNEL), axis=(2, 3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * KERNEL * KERNEL)
    kmat = kd.reshape(f, c * KERNEL * KERNEL)
    out = (cols @ kmat.T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2) + bd[None, :, None, None]

    def vjp(g):
        gd = g[None] if single else g
        gmat = gd.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        gk = (gmat.T @ cols).reshape(f, c, KERNEL, KERNEL)
        gb = gd.sum(axis=(0, 2, 3))
        gcols = (gmat @ kmat).reshape(n, ho, wo, c, KERNEL, KERNEL).transpose(0, 3, 1, 2, 4, 5)
        gx = np.zeros((n, c, h, w))
        for i in range(KERNEL):
            for j in range(KERNEL):
                gx[:, :, i : i + ho, j : j + wo] += gcols[:, :, :, :, i, j]
        return (gx[0] if single else gx, gk, gb)

    return _record(out[0] if single else out, (x, kernels, bias), vjp)


def maxpool2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pool; gradient routes to the first max per window."""
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise ShapeError(f"maxpool2 input must be CxHxW or NxCxHxW, got {x.data.shape}")
    n, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial dims {h}x{w} must be even")
    ho, wo = h // 2, w // 2
    # windows flattened row-major so argmax resolves ties to the first cell
    win = xd.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gd = g[None] if single else g
        gw = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(gw, arg[..., None], gd[..., None], axis=-1)
        gx = gw.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx[0] if single else gx,)

    return _record(out[0] if single else out, (x,), vjp)
