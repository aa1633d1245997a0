"""Closed-form parameter and FLOP accounting.

Counts come from a structural walk of the configuration and never build a
model.  FLOP conventions match the per-op counts recorded on the autodiff
tape, whose per-op table lives in :mod:`translk.ops`; in short one
multiply-accumulate is 2 FLOPs and pure data movement is free.  FLOPs are for
one input volume (batch 1) at inference, so dropout contributes nothing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .blocks import EXPANSION
from .config import ModelConfig
from .desa import AXES, axial_attention
from .entangle import head_kernel_sizes
from .tensor import Tape, Tensor

GATE_KERNEL = 7


@dataclass(frozen=True)
class Cost:
    params: int = 0
    flops: int = 0

    def __add__(self, other: "Cost") -> "Cost":
        return Cost(self.params + other.params, self.flops + other.flops)


def _sum(costs) -> Cost:
    total = Cost()
    for c in costs:
        total = total + c
    return total


# --- leaf layers; ``vox`` is the number of output voxels -------------------

def linear_cost(cin: int, cout: int, vox: int, bias: bool = True) -> Cost:
    return Cost(cin * cout + (cout if bias else 0), 2 * cin * cout * vox)


def conv_cost(cin: int, cout: int, k: int, vox: int, groups: int = 1) -> Cost:
    return Cost(cout * (cin // groups) * k ** 3 + cout, 2 * (cin // groups) * k ** 3 * cout * vox)


def conv_transposed_cost(cin: int, cout: int, vox_in: int, k: int = 2) -> Cost:
    return Cost(cin * cout * k ** 3 + cout, 2 * cin * cout * k ** 3 * vox_in)


def layer_norm_cost(c: int, vox: int) -> Cost:
    return Cost(2 * c, 7 * c * vox)


# --- composite modules; ``dims`` is the (d, h, w) of the feature map ----------

def desa_cost(c: int, heads: int, dims: tuple, axis_mode: str = "chained") -> Cost:
    vox = math.prod(dims)
    proj = _sum(linear_cost(c, c, vox) for _ in range(4))
    axes = dims if axis_mode == "chained" else (dims[AXES["D"] - 3],)
    # per axis of length L: scores 2CSL, scale NSL, softmax 5NSL, apply 2CSL
    attn = sum(4 * c * vox * L + 6 * heads * vox * L for L in axes)
    return proj + Cost(0, attn)


def mhlk_cost(c: int, heads: int, vox: int) -> Cost:
    ch = c // heads
    return linear_cost(c, c, vox) + _sum(conv_cost(ch, ch, k, vox, groups=ch)
                                         for k in head_kernel_sizes(heads))


def channel_gate_cost(c: int, vox: int) -> Cost:
    # pool, fc on the pooled vector, sigmoid, broadcast multiply
    return linear_cost(c, c, 1) + Cost(0, c * vox + 4 * c + c * vox)


def spatial_gate_cost(c: int, vox: int) -> Cost:
    # channel pool, conv7 (2 -> 1), sigmoid, broadcast multiply
    return conv_cost(2, 1, GATE_KERNEL, vox) + Cost(0, 2 * c * vox + 4 * vox + c * vox)


def progressive_cost(c: int, vox: int) -> Cost:
    return channel_gate_cost(c, vox) + spatial_gate_cost(c, vox)


def collaborative_cost(c: int, vox: int) -> Cost:
    return channel_gate_cost(c, vox) + spatial_gate_cost(c, vox) + Cost(0, c * vox)


def ptlk_cost(c: int, heads: int, dims: tuple) -> Cost:
    vox = math.prod(dims)
    return mhlk_cost(c, heads, vox) + progressive_cost(c, vox) + desa_cost(c, heads, dims)


def ctlk_cost(c: int, heads: int, dims: tuple) -> Cost:
    vox = math.prod(dims)
    return mhlk_cost(c, heads, vox) + desa_cost(c, heads, dims) + collaborative_cost(c, vox)


def mlp_cost(c: int, vox: int, variant: str) -> Cost:
    h = EXPANSION * c
    cost = linear_cost(c, h, vox) + Cost(0, 4 * h * vox) + linear_cost(h, c, vox)
    if variant in ("mlp", "ag_mlp"):
        cost = cost + conv_cost(h, h, 3, vox, groups=h)
    if variant == "ag_mlp":
        cost = cost + conv_cost(h, h, 1, vox, groups=h) + Cost(0, 4 * h * vox + h * vox)
    return cost


def block_cost(kind: str, c: int, heads: int, dims: tuple, mlp_variant: str) -> Cost:
    vox = math.prod(dims)
    mixer = ptlk_cost(c, heads, dims) if kind == "ptlk" else ctlk_cost(c, heads, dims)
    # two norms and two residual adds
    norms = layer_norm_cost(c, vox) + layer_norm_cost(c, vox)
    return mixer + mlp_cost(c, vox, mlp_variant) + norms + Cost(0, 2 * c * vox)


def mixed_block_cost(c: int, heads: int, dims: tuple, mlp_variant: str) -> Cost:
    return block_cost("ctlk", c, heads, dims, mlp_variant) + block_cost("ptlk", c, heads, dims, mlp_variant)


def ced_cost(c: int, heads: int, dims: tuple, mlp_variant: str) -> Cost:
    vox = math.prod(dims)
    pfi = mhlk_cost(c, heads, vox) + progressive_cost(c, vox) + desa_cost(c, heads, dims)
    cfi = mhlk_cost(c, heads, vox) + desa_cost(c, heads, dims) + collaborative_cost(c, vox)
    return (pfi + block_cost("ctlk", c, heads, dims, mlp_variant)
            + cfi + block_cost("ptlk", c, heads, dims, mlp_variant) + Cost(0, c * vox))


def plain_fusion_cost(c: int, heads: int, dims: tuple, mlp_variant: str) -> Cost:
    return linear_cost(2 * c, c, math.prod(dims)) + mixed_block_cost(c, heads, dims, mlp_variant)


# --- whole network ------------------------------------------------------------

@dataclass
class CostReport:
    """Per-module parameter and FLOP counts for one config and input shape."""

    parts: dict = field(default_factory=dict)  # module name -> Cost
    input_shape: tuple = ()
    desa_ratio: float = float("nan")

    @property
    def total_params(self) -> int:
        return sum(c.params for c in self.parts.values())

    @property
    def total_flops(self) -> int:
        return sum(c.flops for c in self.parts.values())

    def format(self) -> str:
        width = max(len(k) for k in self.parts) if self.parts else 8
        lines = [f"{'module':<{width}}  {'params':>12}  {'GFLOPs':>10}"]
        for name, c in self.parts.items():
            lines.append(f"{name:<{width}}  {c.params:>12,d}  {c.flops / 1e9:>10.3f}")
        lines.append(f"{'total':<{width}}  {self.total_params:>12,d}  {self.total_flops / 1e9:>10.3f}")
        lines.append(f"params: {self.total_params / 1e6:.3f} M   "
                     f"FLOPs @ {'x'.join(map(str, self.input_shape))}: {self.total_flops / 1e9:.3f} G")
        if not math.isnan(self.desa_ratio):
            lines.append(f"full/axial attention FLOP ratio at the bottleneck: {self.desa_ratio:.2f}")
        return "\n".join(lines)


def _check_shape(shape: tuple) -> tuple:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or any(s <= 0 or s % 32 for s in shape):
        raise ValueError(f"input shape must be three positive multiples of 32, got {shape}")
    return shape


def cost_report(cfg: ModelConfig, shape: tuple = (96, 96, 96)) -> CostReport:
    cfg.validate()
    shape = _check_shape(shape)
    N, mv = cfg.heads, cfg.mlp_variant
    widths, downs = cfg.block_widths, cfg.down_widths

    def dims_at(level: int) -> tuple:
        return tuple(s >> level for s in shape)

    def vox(level: int) -> int:
        return math.prod(dims_at(level))

    parts = {}
    stem = conv_cost(cfg.in_channels, cfg.base_channels, 7, vox(1))
    if cfg.schedule_variant == "wide":
        stem = stem + linear_cost(cfg.base_channels, widths[0], vox(1))
    parts["stem"] = stem
    for i, (w, d) in enumerate(zip(widths, downs)):
        parts[f"encoder.{i}"] = mixed_block_cost(w, N, dims_at(i + 1), mv)
        parts[f"down.{i}"] = conv_cost(w, d, 3, vox(i + 2))
    parts["bottleneck"] = mixed_block_cost(cfg.bottleneck_width, N, dims_at(5), mv)

    up_in = (cfg.bottleneck_width,) + tuple(reversed(widths[1:]))
    up_out = tuple(reversed(widths))
    fusion = ced_cost if cfg.decoder_variant == "ced" else plain_fusion_cost
    for j, (a, b) in enumerate(zip(up_in, up_out)):
        level = 4 - j
        parts[f"up.{j}"] = conv_transposed_cost(a, b, vox(level + 1))
        parts[f"decoder.{j}"] = fusion(b, N, dims_at(level), mv)
    parts["head"] = (conv_transposed_cost(widths[0], cfg.base_channels, vox(1))
                     + linear_cost(cfg.base_channels, cfg.num_classes, vox(0)))
    report = CostReport(parts, shape)
    report.desa_ratio = closed_form_ratio(dims_at(5))
    return report


def count_params(cfg: ModelConfig) -> CostReport:
    """Exact parameter tally (FLOPs reported at the smallest valid input, 32^3)."""
    return cost_report(cfg, (32, 32, 32))


def count_flops(cfg: ModelConfig, shape: tuple) -> CostReport:
    return cost_report(cfg, shape)


# --- attention cost comparison --------------------------------------------------

def closed_form_ratio(dims: tuple) -> float:
    """``(dhw)^2 / (dhw (d + h + w))``: full-attention over axial-attention score cost."""
    vox = math.prod(dims)
    return vox * vox / (vox * sum(dims))


def full_attention(q: Tensor, k: Tensor, v: Tensor, scale: float | None = None) -> Tensor:
    """Quadratic softmax attention over all ``d*h*w`` tokens of each head view."""
    n, heads, ch = q.shape[:3]
    spatial = q.shape[3:]
    tokens = math.prod(spatial)
    if scale is None:
        scale = 1.0 / math.sqrt(ch)

    def flat(t):
        return ops.transpose(ops.reshape(t, (n, heads, ch, tokens)), (0, 1, 3, 2))

    qs, ks, vs = flat(q), flat(k), flat(v)
    scores = ops.scale(ops.matmul(qs, ops.transpose(ks, (0, 1, 3, 2))), scale)
    out = ops.matmul(ops.softmax(scores, axis=-1), vs)
    return ops.reshape(ops.transpose(out, (0, 1, 3, 2)), q.shape)


SCORE_OPS = ("matmul", "scale", "softmax")


def measured_attention_flops(dims: tuple, channels: int, heads: int, full: bool,
                             seed: int = 0) -> int:
    """FLOPs recorded on the tape by one attention pass over random head views."""
    rng = np.random.default_rng(seed)
    shape = (1, heads, channels // heads) + tuple(dims)
    q, k, v = (Tensor(rng.standard_normal(shape), requires_grad=True) for _ in range(3))
    if full:
        out = full_attention(q, k, v)
    else:
        out = v
        for axis in ("H", "W", "D"):
            out = axial_attention(q, k, out, axis)
    return Tape.from_root(out).flops(SCORE_OPS)


def desa_vs_full_ratio(shape: tuple, channels: int, heads: int) -> float:
    """Counter-measured ratio of full to decomposed attention FLOPs."""
    if channels % heads:
        raise ValueError(f"channels C={channels} not divisible by heads N={heads}")
    full = measured_attention_flops(shape, channels, heads, full=True)
    axial = measured_attention_flops(shape, channels, heads, full=False)
    return full / axial
