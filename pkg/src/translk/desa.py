"""Decomposed efficient self-attention: multi-head axial attention over D, H, W.

Head views are rank-6 tensors ``(n, heads, c // heads, d, h, w)``; head ``i``
owns the contiguous channel block ``[i * c_h, (i + 1) * c_h)``.
"""
from __future__ import annotations

import math

import numpy as np

from . import ops
from .nn import Dropout, Linear, Module
from .tensor import Tensor

# spatial axis name -> index in a head view
AXES = {"D": 3, "H": 4, "W": 5}
AXIS_ORDER = ("H", "W", "D")


def split_heads(x: Tensor, heads: int) -> Tensor:
    n, c = x.shape[:2]
    if c % heads:
        raise ValueError(f"channels C={c} not divisible by heads N={heads}")
    return ops.reshape(x, (n, heads, c // heads) + x.shape[2:])


def merge_heads(hv: Tensor) -> Tensor:
    n, heads, ch = hv.shape[:3]
    return ops.reshape(hv, (n, heads * ch) + hv.shape[3:])


def axial_attention(q: Tensor, k: Tensor, v: Tensor, axis: str, scale: float | None = None) -> Tensor:
    """Softmax attention restricted to sequences along one spatial axis.

    Every position of the other two axes (per batch item and head) defines an
    independent sequence whose tokens are the ``c_h``-dim head embeddings.
    ``scale`` defaults to ``1 / sqrt(c_h)``.
    """
    if not (q.shape == k.shape == v.shape):
        raise ValueError(f"q, k, v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    if axis not in AXES:
        raise ValueError(f"axis must be one of {sorted(AXES)}, got {axis!r}")
    ax = AXES[axis]
    others = [i for i in (3, 4, 5) if i != ax]
    perm = (0, 1, others[0], others[1], ax, 2)
    inv = tuple(np.argsort(perm))
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[2])
    qs, ks, vs = (ops.transpose(t, perm) for t in (q, k, v))
    scores = ops.scale(ops.matmul(qs, ops.transpose(ks, (0, 1, 2, 3, 5, 4))), scale)
    out = ops.matmul(ops.softmax(scores, axis=-1), vs)
    return ops.transpose(out, inv)


class DESA(Module):
    """Q/K/V and output projections around chained H -> W -> D axial attention.

    ``axis_mode="chained"`` feeds each axis' output in as the next axis'
    values; ``"independent"`` applies only the D-axis attention to the
    projected values (the H and W passes would be discarded).
    """

    def __init__(self, channels: int, heads: int, rng: np.random.Generator,
                 dropout: float = 0.0, axis_mode: str = "chained"):
        if channels % heads:
            raise ValueError(f"channels C={channels} not divisible by heads N={heads}")
        if axis_mode not in ("chained", "independent"):
            raise ValueError(f"unknown axis_mode {axis_mode!r}")
        self.heads = heads
        self.axis_mode = axis_mode
        self.q = Linear(channels, channels, rng)
        self.k = Linear(channels, channels, rng)
        self.v = Linear(channels, channels, rng)
        self.out = Linear(channels, channels, rng)
        self.drop = Dropout(dropout, rng)

    def forward(self, q_src: Tensor, k_src: Tensor, v_src: Tensor) -> Tensor:
        if not (q_src.shape == k_src.shape == v_src.shape):
            raise ValueError(f"DESA inputs differ in shape: {q_src.shape}, {k_src.shape}, {v_src.shape}")
        c = q_src.shape[1]
        scale = 1.0 / math.sqrt(c / self.heads)
        q = split_heads(self.q(q_src), self.heads)
        k = split_heads(self.k(k_src), self.heads)
        v = split_heads(self.v(v_src), self.heads)
        if self.axis_mode == "chained":
            for axis in AXIS_ORDER:
                v = axial_attention(q, k, v, axis, scale)
        else:
            v = axial_attention(q, k, v, "D", scale)
        return self.drop(self.out(merge_heads(v)))
