"""Encoder / bottleneck / decoder assembly and the decoder fusion blocks."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import ops
from .blocks import MixedBlock, TransformerBlock
from .config import ModelConfig
from .desa import DESA
from .entangle import MHLK, ChannelGate, SpatialGate, collaborative_entangle, progressive_entangle
from .nn import Conv3d, ConvTranspose3d, Linear, Module
from .tensor import Tensor

DIVISOR = 32


def cross_group(x_skip: Tensor, x_up: Tensor) -> tuple[Tensor, Tensor]:
    """Halve both inputs along channels and pair first halves / second halves."""
    if x_skip.shape != x_up.shape:
        raise ValueError(f"cross_group: skip {x_skip.shape} vs up {x_up.shape}")
    c = x_skip.shape[1]
    if c % 2:
        raise ValueError(f"cross_group: channel count {c} is odd")
    h = c // 2
    x1 = ops.concat([ops.channels(x_skip, 0, h), ops.channels(x_up, 0, h)], axis=1)
    x2 = ops.concat([ops.channels(x_skip, h, c), ops.channels(x_up, h, c)], axis=1)
    return x1, x2


class PFI(Module):
    """MHLK + progressive entanglement on X1 supply values; X2 supplies queries and keys."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator, dropout: float = 0.0):
        self.mhlk = MHLK(channels, heads, rng)
        self.ch = ChannelGate(channels, rng)
        self.sp = SpatialGate(rng)
        self.desa = DESA(channels, heads, rng, dropout)

    def forward(self, x_skip: Tensor, x_up: Tensor) -> Tensor:
        x1, x2 = cross_group(x_skip, x_up)
        x1 = progressive_entangle(self.mhlk(x1), self.ch, self.sp)
        return self.desa(x2, x2, x1)


class CFI(Module):
    """MHLK on X1, DESA on X2, fused by collaborative entanglement."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator, dropout: float = 0.0):
        self.mhlk = MHLK(channels, heads, rng)
        self.desa = DESA(channels, heads, rng, dropout)
        self.ch = ChannelGate(channels, rng)
        self.sp = SpatialGate(rng)

    def forward(self, x_skip: Tensor, x_up: Tensor) -> Tensor:
        x1, x2 = cross_group(x_skip, x_up)
        return collaborative_entangle(self.mhlk(x1), self.desa(x2, x2, x2), self.ch, self.sp)


class CED(Module):
    """Two fusion paths summed: PFI -> CTLK block and CFI -> PTLK block."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator,
                 mlp_variant: str = "ag_mlp", dropout: float = 0.0):
        self.pfi = PFI(channels, heads, rng, dropout)
        self.ctlk = TransformerBlock("ctlk", channels, heads, rng, mlp_variant, dropout)
        self.cfi = CFI(channels, heads, rng, dropout)
        self.ptlk = TransformerBlock("ptlk", channels, heads, rng, mlp_variant, dropout)

    def forward(self, x_skip: Tensor, x_up: Tensor) -> Tensor:
        a = self.ctlk(self.pfi(x_skip, x_up))
        b = self.ptlk(self.cfi(x_skip, x_up))
        return ops.add(a, b)


class PlainFusion(Module):
    """Concatenate skip and upsampled features, recover width with a 1x1x1 conv, mixed block."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator,
                 mlp_variant: str = "ag_mlp", dropout: float = 0.0):
        self.fuse = Linear(2 * channels, channels, rng)
        self.block = MixedBlock(channels, heads, rng, mlp_variant, dropout)

    def forward(self, x_skip: Tensor, x_up: Tensor) -> Tensor:
        if x_skip.shape != x_up.shape:
            raise ValueError(f"plain fusion: skip {x_skip.shape} vs up {x_up.shape}")
        return self.block(self.fuse(ops.concat([x_skip, x_up], axis=1)))


class Skip(NamedTuple):
    stage: int
    tensor: Tensor


class SegmentationNet(Module):
    """Stem, four encoder stages, bottleneck, four fusion decoder stages, head.

    Stage ``i`` of the encoder runs at 1/2^(i+1) resolution and its output
    is the skip consumed by decoder stage ``3 - i``.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        N, mv, p = cfg.heads, cfg.mlp_variant, cfg.dropout
        widths, downs = cfg.block_widths, cfg.down_widths
        base = cfg.base_channels

        self.stem = Conv3d(cfg.in_channels, base, 7, rng, stride=2, padding=3)
        self.stem_proj = Linear(base, widths[0], rng) if cfg.schedule_variant == "wide" else None
        self.stages = [MixedBlock(w, N, rng, mv, p) for w in widths]
        self.downsamplers = [Conv3d(w, d, 3, rng, stride=2, padding=1) for w, d in zip(widths, downs)]
        self.bottleneck_block = MixedBlock(cfg.bottleneck_width, N, rng, mv, p)

        up_in = (cfg.bottleneck_width,) + tuple(reversed(widths[1:]))
        up_out = tuple(reversed(widths))
        self.upsamplers = [ConvTranspose3d(a, b, rng) for a, b in zip(up_in, up_out)]
        fusion = CED if cfg.decoder_variant == "ced" else PlainFusion
        self.fusions = [fusion(w, N, rng, mv, p) for w in up_out]

        self.head_up = ConvTranspose3d(widths[0], base, rng)
        self.head = Linear(base, cfg.num_classes, rng)

    def stem_encode(self, img: Tensor) -> Tensor:
        if img.ndim != 5:
            raise ValueError(f"expected (n, c, d, h, w) input, got shape {img.shape}")
        if img.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected {self.cfg.in_channels} input channels, got {img.shape[1]}")
        bad = [d for d in img.shape[2:] if d % DIVISOR]
        if bad:
            raise ValueError(f"spatial dims {img.shape[2:]} must all be divisible by {DIVISOR}")
        x = self.stem(img)
        return self.stem_proj(x) if self.stem_proj is not None else x

    def encoder_forward(self, x: Tensor) -> tuple[Tensor, list[Skip]]:
        skips = []
        for i, (block, down) in enumerate(zip(self.stages, self.downsamplers)):
            x = block(x)
            skips.append(Skip(i, x))
            x = down(x)
        return x, skips

    def bottleneck(self, x: Tensor) -> Tensor:
        return self.bottleneck_block(x)

    def decoder_forward(self, x: Tensor, skips: list[Skip]) -> Tensor:
        if len(skips) != len(self.fusions):
            raise ValueError(f"decoder expects {len(self.fusions)} skips, got {len(skips)}")
        for j, (up, fuse) in enumerate(zip(self.upsamplers, self.fusions)):
            stage = len(skips) - 1 - j
            skip = skips[stage]
            if skip.stage != stage:
                raise ValueError(f"decoder stage {j} expected encoder skip {stage}, got {skip.stage}")
            x = up(x)
            if x.shape != skip.tensor.shape:
                raise ValueError(f"decoder stage {j}: upsampled {x.shape} does not match "
                                 f"skip from encoder stage {stage} {skip.tensor.shape}")
            x = fuse(skip.tensor, x)
        return x

    def predict_head(self, x: Tensor) -> Tensor:
        return self.head(self.head_up(x))

    def forward(self, img: Tensor) -> Tensor:
        x, skips = self.encoder_forward(self.stem_encode(img))
        x = self.decoder_forward(self.bottleneck(x), skips)
        return self.predict_head(x)


def build_model(cfg: ModelConfig, dtype=np.float32) -> SegmentationNet:
    model = SegmentationNet(cfg)
    if dtype != np.float32:
        model.astype(dtype)
    return model
