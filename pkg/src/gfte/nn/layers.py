"""Parameter containers, initialisation and the layers the model is built from."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from gfte.nn import tensor as T
from gfte.nn.tensor import ShapeError, Tensor
from gfte.rng import Xoshiro256


class ParamSet:
    """Ordered name -> trainable Tensor map with deterministic iteration."""

    def __init__(self, items=None):
        self._p: "OrderedDict[str, Tensor]" = OrderedDict()
        for k, v in (items or {}).items():
            self[k] = v

    def __setitem__(self, name: str, t: Tensor) -> None:
        if name in self._p:
            raise KeyError(f"duplicate parameter name {name!r}")
        t.requires_grad = True
        self._p[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._p[name]

    def __contains__(self, name) -> bool:
        return name in self._p

    def __iter__(self) -> Iterator[str]:
        return iter(self._p)

    def __len__(self) -> int:
        return len(self._p)

    def items(self):
        return self._p.items()

    def names(self) -> list[str]:
        return list(self._p)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._p.items()}

    def zero_grad(self) -> None:
        for t in self._p.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in self._p.items()}

    def astype(self, dtype) -> "ParamSet":
        return ParamSet({k: Tensor(v.data.astype(dtype), dtype=dtype) for k, v in self._p.items()})

    def copy(self) -> "ParamSet":
        return ParamSet({k: Tensor(v.data.copy(), dtype=v.dtype) for k, v in self._p.items()})

    def n_values(self) -> int:
        return sum(v.data.size for v in self._p.values())


def glorot(rng: Xoshiro256, shape: tuple[int, ...], fan_in: int, fan_out: int, dtype=np.float32) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    n = int(np.prod(shape))
    vals = np.array(rng.uniform_array(n, -limit, limit), dtype=np.float64).reshape(shape)
    return Tensor(vals.astype(dtype), dtype=dtype)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), dtype=dtype)


# -- embedding + recurrent encoder -------------------------------------------------------


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup; ``ids`` may have any shape, output is ids.shape + (d,)."""
    ids = np.asarray(ids, dtype=np.int64)
    return T.take_rows(table, ids)


def init_lstm(ps: ParamSet, prefix: str, vocab_size: int, embed_dim: int, hidden: int, rng: Xoshiro256, dtype=np.float32) -> None:
    ps[f"{prefix}.embed"] = glorot(rng, (vocab_size, embed_dim), vocab_size, embed_dim, dtype)
    ps[f"{prefix}.w_ih"] = glorot(rng, (embed_dim, 4 * hidden), embed_dim, 4 * hidden, dtype)
    ps[f"{prefix}.w_hh"] = glorot(rng, (hidden, 4 * hidden), hidden, 4 * hidden, dtype)
    ps[f"{prefix}.b"] = zeros((4 * hidden,), dtype)


def recurrent_encode(ps: ParamSet, prefix: str, ids) -> Tensor:
    """LSTM over embedded ``ids`` (n, L), left to right; returns final h (n, hidden).

    Gate layout along the 4*hidden axis is input, forget, cell, output.
    A 1-D ``ids`` is treated as a single sequence and returns (hidden,).
    """
    ids = np.asarray(ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None, :]
    n, L = ids.shape
    if L < 1:
        raise ShapeError("recurrent_encode needs a non-empty sequence")
    emb = ps[f"{prefix}.embed"]
    w_ih, w_hh, b = ps[f"{prefix}.w_ih"], ps[f"{prefix}.w_hh"], ps[f"{prefix}.b"]
    hid = w_hh.shape[0]
    x = embedding(emb, ids.reshape(-1))
    xp = T.matmul(x, w_ih).reshape(n, L, 4 * hid)
    h = T.Tensor(np.zeros((n, hid), dtype=emb.dtype), dtype=emb.dtype)
    c = T.Tensor(np.zeros((n, hid), dtype=emb.dtype), dtype=emb.dtype)
    for step in range(L):
        gates = T.add(T.add(xp[:, step, :], T.matmul(h, w_hh)), b)
        i = T.sigmoid(gates[:, 0:hid])
        f = T.sigmoid(gates[:, hid : 2 * hid])
        g = T.tanh(gates[:, 2 * hid : 3 * hid])
        o = T.sigmoid(gates[:, 3 * hid : 4 * hid])
        c = T.add(T.mul(f, c), T.mul(i, g))
        h = T.mul(o, T.tanh(c))
    return h[0] if single else h


# -- convolution stack ------------------------------------------------------------------

CONV_CHANNELS = (1, 8, 16, 32)
CONV_INPUT = 256


def init_conv_stack(ps: ParamSet, prefix: str, rng: Xoshiro256, channels=CONV_CHANNELS, dtype=np.float32) -> None:
    for li, (cin, cout) in enumerate(zip(channels[:-1], channels[1:])):
        ps[f"{prefix}.{li}.w"] = glorot(rng, (cout, cin, 3, 3), cin * 9, cout * 9, dtype)
        ps[f"{prefix}.{li}.b"] = zeros((cout,), dtype)


def conv_stack(ps: ParamSet, prefix: str, img: Tensor, n_layers: int = 3, expect_size: Optional[int] = CONV_INPUT) -> Tensor:
    """Three (3x3 conv, stride 2, pad 1, ReLU) blocks: 1x256x256 -> 32x32x32."""
    if img.ndim == 2:
        img = img.reshape(1, *img.shape)
    if expect_size is not None and img.shape != (1, expect_size, expect_size):
        raise ShapeError(f"conv_stack expects input 1x{expect_size}x{expect_size}, got {'x'.join(map(str, img.shape))}")
    x = img
    for li in range(n_layers):
        x = T.relu(T.conv2d(x, ps[f"{prefix}.{li}.w"], ps[f"{prefix}.{li}.b"], stride=2, pad=1))
    return x


# -- graph convolution ---------------------------------------------------------------------


def normalized_adjacency(n: int, edge_index, dtype=np.float32) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 for an undirected edge list over ``n`` nodes."""
    A = np.eye(n, dtype=np.float64)
    ei = np.asarray(edge_index, dtype=np.int64).reshape(-1, 2)
    if ei.size and (ei.min() < 0 or ei.max() >= n):
        raise ValueError(f"edge references node outside 0..{n - 1}")
    for a, b in ei:
        if a != b:
            A[a, b] = 1.0
            A[b, a] = 1.0
    d = A.sum(axis=1)
    dinv = 1.0 / np.sqrt(d)
    return (A * dinv[:, None] * dinv[None, :]).astype(dtype)


def init_linear(ps: ParamSet, prefix: str, d_in: int, d_out: int, rng: Xoshiro256, dtype=np.float32) -> None:
    ps[f"{prefix}.w"] = glorot(rng, (d_in, d_out), d_in, d_out, dtype)
    ps[f"{prefix}.b"] = zeros((d_out,), dtype)


def graph_conv(ps: ParamSet, prefix: str, H: Tensor, edge_index, adj: Optional[np.ndarray] = None) -> Tensor:
    """ReLU(Â H W + b) with Â the symmetric-normalised adjacency plus self-loops."""
    w, b = ps[f"{prefix}.w"], ps[f"{prefix}.b"]
    if H.ndim != 2 or H.shape[1] != w.shape[0]:
        raise ShapeError(f"graph_conv: features {H.shape} vs weight {w.shape}")
    if adj is None:
        adj = normalized_adjacency(H.shape[0], edge_index, H.dtype)
    return T.relu(T.add(T.constant_matmul(adj, T.matmul(H, w)), b))


# -- MLP head ----------------------------------------------------------------------------------


def init_mlp(ps: ParamSet, prefix: str, d_in: int, hidden: int, d_out: int, rng: Xoshiro256, dtype=np.float32) -> None:
    init_linear(ps, f"{prefix}.0", d_in, hidden, rng, dtype)
    init_linear(ps, f"{prefix}.1", hidden, d_out, rng, dtype)


def mlp(ps: ParamSet, prefix: str, x: Tensor) -> Tensor:
    w0 = ps[f"{prefix}.0.w"]
    if x.ndim != 2 or x.shape[1] != w0.shape[0]:
        raise ShapeError(f"mlp: input {x.shape} vs first layer {w0.shape}")
    h = T.relu(T.add(T.matmul(x, w0), ps[f"{prefix}.0.b"]))
    return T.add(T.matmul(h, ps[f"{prefix}.1.w"]), ps[f"{prefix}.1.b"])
