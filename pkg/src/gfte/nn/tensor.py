"""Reverse-mode autograd over numpy arrays.

A ``Tensor`` records the op that produced it together with a closure that
pushes its gradient to its parents. ``backward`` walks the graph in reverse
topological order. Training runs in float32; gradient checks switch the
default dtype to float64 with :func:`precision`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    pass


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new tensors."""
    global _DEFAULT_DTYPE
    old = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None, _parents: tuple = (), op: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.op = op

    # -- basics ------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op or 'leaf'})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior grads are not needed once propagated
                    node.grad = None if node is not self else node.grad

    # -- operator sugar --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=rg, dtype=data.dtype, _parents=tuple(parents) if rg else (), op=op)
    if rg:
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ---------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    _check_broadcast(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    _check_broadcast(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accum(-g)

    return _make(-a.data, (a,), backward, "neg")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        a._accum(g * mask)

    return _make(a.data * mask, (a,), backward, "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split on sign to keep exp() from overflowing
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def backward(g):
        a._accum(g * s * (1.0 - s))

    return _make(s, (a,), backward, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def backward(g):
        a._accum(g * (1.0 - t * t))

    return _make(t, (a,), backward, "tanh")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accum(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _make(s, (a,), backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def backward(g):
        a._accum(g - s * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), backward, "log_softmax")


# -- linear algebra / shape --------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        a._accum(g.T)

    return _make(a.data.T, (a,), backward, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None

    def backward(g):
        a._accum(g.reshape(old))

    return _make(out, (a,), backward, "reshape")


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty list")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}") from None
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def backward(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return _make(out, ts, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        for t, gi in zip(ts, parts):
            if t.requires_grad:
                t._accum(gi)

    return _make(out, ts, backward, "stack")


def getitem(a: Tensor, idx) -> Tensor:
    """Basic slicing (no integer-array indexing; see :func:`take_rows`)."""
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accum(full)

    return _make(np.array(out), (a,), backward, "slice")


def take_rows(a: Tensor, ids) -> Tensor:
    """Gather rows ``a[ids]``; gradient scatter-adds into the gathered rows."""
    ids = np.asarray(ids, dtype=np.int64)
    n = a.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = ids[(ids < 0) | (ids >= n)][0]
        raise IndexError(f"row id {int(bad)} out of range for {n} rows")

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, ids.reshape(-1), g.reshape((-1,) + a.shape[1:]))
        a._accum(full)

    return _make(a.data[ids], (a,), backward, "take_rows")


def tsum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))

    return _make(np.asarray(out), (a,), backward, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g / n, a.shape))

    return _make(np.asarray(out, dtype=a.dtype), (a,), backward, "mean")


def constant_matmul(m: np.ndarray, a: Tensor) -> Tensor:
    """``m @ a`` for a fixed (non-trainable) numpy matrix ``m``."""
    m = np.asarray(m, dtype=a.dtype)
    if m.ndim != 2 or a.ndim != 2 or m.shape[1] != a.shape[0]:
        raise ShapeError(f"matmul: shapes {m.shape} and {a.shape} are not aligned")

    def backward(g):
        a._accum(m.T @ g)

    return _make(m @ a.data, (a,), backward, "const_matmul")


# -- losses ----------------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels, weights=None) -> Tensor:
    """Mean softmax cross-entropy of ``logits`` (m x C) against integer labels.

    Optional per-row ``weights`` give a weighted mean.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (m, C) logits, got {logits.shape}")
    y = np.asarray(labels).astype(np.int64).reshape(-1)
    m = logits.shape[0]
    if m < 1 or y.shape[0] != m:
        raise ShapeError(f"cross_entropy: {m} logit rows vs {y.shape[0]} labels")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    nll = lse - z[np.arange(m), y]
    w = np.ones(m, dtype=logits.dtype) if weights is None else np.asarray(weights, dtype=logits.dtype)
    wsum = w.sum()
    loss = (w * nll).sum() / wsum

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(m), y] -= 1.0
        logits._accum(g * p * (w / wsum)[:, None])

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


# -- convolution ----------------------------------------------------------------------------


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Single-image 2-D cross-correlation: x (Cin,H,W), w (Cout,Cin,kh,kw)."""
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    cin, H, W = x.shape
    cout, _, kh, kw = w.shape
    ho, wo = _conv_out(H, kh, stride, pad), _conv_out(W, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    # cols: (cin, kh, kw, ho, wo)
    cols = np.empty((cin, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride]
    cols2 = cols.reshape(cin * kh * kw, ho * wo)
    wmat = w.data.reshape(cout, -1)
    out = wmat @ cols2
    if b is not None:
        out = out + b.data[:, None]
    out = out.reshape(cout, ho, wo)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(cout, ho * wo)
        if w.requires_grad:
            w._accum((g2 @ cols2.T).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accum(g2.sum(axis=1))
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape(cin, kh, kw, ho, wo)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, i, j]
            x._accum(dxp[:, pad : pad + H, pad : pad + W])

    return _make(out, parents, backward, "conv2d")


# -- sampling -----------------------------------------------------------------------------


def grid_sample(fmap: Tensor, points) -> Tensor:
    """Align-corners bilinear reads of a (C,H,W) map at normalised (u,v) points.

    ``u`` runs along the width and ``v`` along the height; both are clamped
    to [0, 1]. Returns (n, C). Differentiable w.r.t. ``fmap`` only.
    """
    if fmap.ndim != 3:
        raise ShapeError(f"grid_sample expects a (C,H,W) map, got {fmap.shape}")
    C, H, W = fmap.shape
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise ValueError("grid_sample points must be finite")
    pts = np.clip(pts, 0.0, 1.0)
    x = pts[:, 0] * (W - 1)
    y = pts[:, 1] * (H - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = (x - x0).astype(fmap.dtype)
    wy = (y - y0).astype(fmap.dtype)
    corners = [
        (y0, x0, (1 - wy) * (1 - wx)),
        (y0, x1, (1 - wy) * wx),
        (y1, x0, wy * (1 - wx)),
        (y1, x1, wy * wx),
    ]
    d = fmap.data
    out = np.zeros((pts.shape[0], C), dtype=fmap.dtype)
    for yy, xx, ww in corners:
        out += d[:, yy, xx].T * ww[:, None]

    def backward(g):
        full = np.zeros_like(d)
        for yy, xx, ww in corners:
            # full[c, yy[k], xx[k]] += g[k, c] * ww[k]
            np.add.at(full, (slice(None), yy, xx), (g * ww[:, None]).T)
        fmap._accum(full)

    return _make(out, (fmap,), backward, "grid_sample")
