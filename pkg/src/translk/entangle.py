"""Multi-head large-kernel convolution and the two attention-entanglement schemes."""
from __future__ import annotations

import numpy as np

from . import ops
from .nn import Conv3d, Linear, Module
from .tensor import Tensor


def head_kernel_sizes(heads: int) -> list[int]:
    """Kernel size per head: 3, 5, 7, ... (grows by 2 per head)."""
    return [3 + 2 * i for i in range(heads)]


class MHLK(Module):
    """Pointwise projection, contiguous channel split, one depthwise kernel size per head."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator):
        if channels % heads:
            raise ValueError(f"channels C={channels} not divisible by heads N={heads}")
        self.heads = heads
        self.head_channels = channels // heads
        self.proj = Linear(channels, channels, rng)
        ch = self.head_channels
        self.convs = [Conv3d(ch, ch, k, rng, padding=(k - 1) // 2, groups=ch)
                      for k in head_kernel_sizes(heads)]

    def kernel_sizes(self) -> list[int]:
        return [conv.weight.shape[-1] for conv in self.convs]

    def convolve_heads(self, x: Tensor) -> Tensor:
        """Per-head depthwise convolutions on already projected features."""
        ch = self.head_channels
        parts = [conv(ops.channels(x, i * ch, (i + 1) * ch)) for i, conv in enumerate(self.convs)]
        return ops.concat(parts, axis=1)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] % self.heads:
            raise ValueError(f"channels C={x.shape[1]} not divisible by heads N={self.heads}")
        return self.convolve_heads(self.proj(x))


class ChannelGate(Module):
    """``target * sigmoid(linear(avgpool(source)))``, one gate value per channel."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.fc = Linear(channels, channels, rng)

    def gate(self, source: Tensor) -> Tensor:
        return ops.sigmoid(self.fc(ops.global_avg_pool(source)))

    def forward(self, source: Tensor, target: Tensor) -> Tensor:
        if source.shape != target.shape:
            raise ValueError(f"channel gate: source {source.shape} vs target {target.shape}")
        return ops.mul(target, self.gate(source))


class SpatialGate(Module):
    """``target * sigmoid(conv7(chpool(source)))``, one gate value per voxel."""

    def __init__(self, rng: np.random.Generator):
        self.conv = Conv3d(2, 1, 7, rng, padding=3)

    def gate(self, source: Tensor) -> Tensor:
        return ops.sigmoid(self.conv(ops.channel_pool(source)))

    def forward(self, source: Tensor, target: Tensor) -> Tensor:
        if source.shape != target.shape:
            raise ValueError(f"spatial gate: source {source.shape} vs target {target.shape}")
        return ops.mul(target, self.gate(source))


def progressive_entangle(x: Tensor, ch: ChannelGate, sp: SpatialGate) -> Tensor:
    """Self-sourced channel gate followed by a self-sourced spatial gate."""
    x_ch = ch(x, x)
    return sp(x_ch, x_ch)


def collaborative_entangle(x_lk: Tensor, x_sa: Tensor, ch: ChannelGate, sp: SpatialGate) -> Tensor:
    """Cross-sourced gating then sum.

    The conv features choose *where* (spatial gate on the attention branch),
    the attention features choose *which channels* (channel gate on the conv
    branch).
    """
    if x_lk.shape != x_sa.shape:
        raise ValueError(f"collaborative entanglement: {x_lk.shape} vs {x_sa.shape}")
    sa = sp(x_lk, x_sa)
    lk = ch(x_sa, x_lk)
    return ops.add(lk, sa)
