"""Parameterised layers on top of :mod:`translk.ops`.

Initialisation conventions: truncated normal with std ``1 / sqrt(fan_in)``
(cut at two standard deviations) for channel projections, He-normal fan-in
scaling for spatial convolutions, zero biases, layer-norm scale one and
shift zero.  A fixed small std (0.02 is common for wide vision
transformers) shrinks the signal by ``0.02 * sqrt(c_in)`` per projection;
at the narrow widths used for desk-scale training, and on the fusion paths
that have no residual, that leaves the encoder with gradients near 1e-11,
below the optimiser's epsilon.  Every layer
draws from the ``numpy.random.Generator`` it is constructed with, so the
same seed and construction order give bit-identical parameters.
"""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .tensor import DEFAULT_DTYPE, ParamStore, Tensor


def trunc_normal(rng: np.random.Generator, shape: tuple, std: float) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(DEFAULT_DTYPE)


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(DEFAULT_DTYPE)


def param(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=DEFAULT_DTYPE), requires_grad=True)


class Module:
    """Container base: parameters and submodules are discovered from attributes."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, val in vars(self).items():
            if isinstance(val, (Tensor, Module)):
                yield name, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Tensor, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in self._children():
            if isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            else:
                yield f"{prefix}{name}", val

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, val in self._children():
            if isinstance(val, Module):
                yield from val.modules()

    def params(self, seed: int | None = None) -> ParamStore:
        return ParamStore(self.named_parameters(), seed=seed)

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def astype(self, dtype) -> "Module":
        for _, t in self.named_parameters():
            t.data = t.data.astype(dtype)
        return self

    def requires_grad_(self, flag: bool = True) -> "Module":
        for _, t in self.named_parameters():
            t.requires_grad = flag
        return self


class Linear(Module):
    """Per-voxel channel projection (a 1x1x1 convolution)."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, bias: bool = True):
        self.weight = param(trunc_normal(rng, (cout, cin), std=1.0 / math.sqrt(cin)))
        self.bias = param(np.zeros(cout)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv3d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, groups: int = 1, bias: bool = True):
        if cin % groups or cout % groups:
            raise ValueError(f"groups={groups} must divide c_in={cin} and c_out={cout}")
        fan_in = (cin // groups) * kernel ** 3
        self.weight = param(he_normal(rng, (cout, cin // groups, kernel, kernel, kernel), fan_in))
        self.bias = param(np.zeros(cout)) if bias else None
        self.stride, self.padding, self.groups = stride, padding, groups

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class ConvTranspose3d(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, kernel: int = 2, stride: int = 2):
        self.weight = param(he_normal(rng, (cin, cout, kernel, kernel, kernel), cin))
        self.bias = param(np.zeros(cout))
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv3d_transposed(x, self.weight, self.bias, self.stride)


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        self.weight = param(np.ones(channels))
        self.bias = param(np.zeros(channels))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, self.eps)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        # own stream so masks never perturb parameter initialisation order
        self._rng = np.random.default_rng(int(rng.integers(2 ** 63)))

    def forward(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.p, self._rng, self.training)
