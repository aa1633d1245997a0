"""Token mixers (PTLK, CTLK), channel mixers (AG-MLP and its ablations) and
the pre-norm transformer blocks built from them."""
from __future__ import annotations

import numpy as np

from . import ops
from .desa import DESA
from .entangle import MHLK, ChannelGate, SpatialGate, collaborative_entangle, progressive_entangle
from .nn import Conv3d, Dropout, LayerNorm, Linear, Module
from .tensor import Tensor

MLP_VARIANTS = ("ffn", "mlp", "ag_mlp")
EXPANSION = 4


class PTLK(Module):
    """Serial mixer: MHLK -> progressive entanglement -> DESA (values from the gated path).

    ``residual`` adds the module input back; transformer blocks turn it off
    and apply their own residual around the pre-norm.
    """

    def __init__(self, channels: int, heads: int, rng: np.random.Generator,
                 dropout: float = 0.0, residual: bool = True):
        self.mhlk = MHLK(channels, heads, rng)
        self.ch = ChannelGate(channels, rng)
        self.sp = SpatialGate(rng)
        self.desa = DESA(channels, heads, rng, dropout)
        self.residual = residual

    def forward(self, x: Tensor) -> Tensor:
        x1 = self.mhlk(x)
        x_att = progressive_entangle(x1, self.ch, self.sp)
        out = self.desa(x1, x1, x_att)
        return ops.add(out, x) if self.residual else out


class CTLK(Module):
    """Parallel mixer: MHLK and DESA on the same input, fused by collaborative entanglement."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator,
                 dropout: float = 0.0, residual: bool = True):
        self.mhlk = MHLK(channels, heads, rng)
        self.desa = DESA(channels, heads, rng, dropout)
        self.ch = ChannelGate(channels, rng)
        self.sp = SpatialGate(rng)
        self.residual = residual

    def forward(self, x: Tensor) -> Tensor:
        x_lk = self.mhlk(x)
        x_sa = self.desa(x, x, x)
        out = collaborative_entangle(x_lk, x_sa, self.ch, self.sp)
        return ops.add(out, x) if self.residual else out


class AGMLP(Module):
    """Channel MLP with expansion 4.

    ``ag_mlp``: up -> GELU -> (depthwise 3^3 conv) * sigmoid(per-channel 1x1x1 gate) -> down.
    ``mlp`` drops the gate, ``ffn`` also drops the depthwise conv.
    Dropout sits before and after the down projection.
    """

    def __init__(self, channels: int, rng: np.random.Generator, variant: str = "ag_mlp",
                 dropout: float = 0.0):
        if variant not in MLP_VARIANTS:
            raise ValueError(f"mlp variant must be one of {MLP_VARIANTS}, got {variant!r}")
        hidden = EXPANSION * channels
        self.variant = variant
        self.up = Linear(channels, hidden, rng)
        if variant != "ffn":
            self.dw = Conv3d(hidden, hidden, 3, rng, padding=1, groups=hidden)
        if variant == "ag_mlp":
            self.gate = Conv3d(hidden, hidden, 1, rng, groups=hidden)
        self.drop1 = Dropout(dropout, rng)
        self.down = Linear(hidden, channels, rng)
        self.drop2 = Dropout(dropout, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = ops.gelu(self.up(x))
        if self.variant == "ag_mlp":
            h = ops.mul(self.dw(h), ops.sigmoid(self.gate(h)))
        elif self.variant == "mlp":
            h = self.dw(h)
        return self.drop2(self.down(self.drop1(h)))


class TransformerBlock(Module):
    """``y = mixer(LN(x)) + x; out = mlp(LN(y)) + y`` with mixer PTLK or CTLK."""

    def __init__(self, kind: str, channels: int, heads: int, rng: np.random.Generator,
                 mlp_variant: str = "ag_mlp", dropout: float = 0.0):
        mixers = {"ptlk": PTLK, "ctlk": CTLK}
        if kind not in mixers:
            raise ValueError(f"block kind must be 'ptlk' or 'ctlk', got {kind!r}")
        self.kind = kind
        self.norm1 = LayerNorm(channels)
        self.mixer = mixers[kind](channels, heads, rng, dropout, residual=False)
        self.norm2 = LayerNorm(channels)
        self.mlp = AGMLP(channels, rng, mlp_variant, dropout)

    def forward(self, x: Tensor) -> Tensor:
        y = ops.add(self.mixer(self.norm1(x)), x)
        return ops.add(self.mlp(self.norm2(y)), y)


class MixedBlock(Module):
    """A CTLK block followed by a PTLK block."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator,
                 mlp_variant: str = "ag_mlp", dropout: float = 0.0):
        self.ctlk = TransformerBlock("ctlk", channels, heads, rng, mlp_variant, dropout)
        self.ptlk = TransformerBlock("ptlk", channels, heads, rng, mlp_variant, dropout)

    def forward(self, x: Tensor) -> Tensor:
        return self.ptlk(self.ctlk(x))
