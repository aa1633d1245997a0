"""Deterministic synthetic 3-D segmentation volumes.

Each foreground class is one axis-aligned ellipsoid placed fully inside the
volume; later classes overwrite earlier ones where they overlap.  The image
is a class-dependent intensity plus Gaussian noise.  Volume ``i`` of a
stream seeded with ``seed`` depends only on ``(seed, i)``, so batches can
be produced in any order (or ahead of time) without changing their content.
"""
from __future__ import annotations

import math
from typing import Iterator, NamedTuple

import numpy as np

from .tensor import Tensor

NOISE_STD = 0.1
MIN_FRACTION = 0.01
RADIUS_RANGE = (0.12, 0.3)  # fraction of the axis length


class Ellipsoid(NamedTuple):
    class_id: int
    center: tuple
    radii: tuple


class SegBatch(NamedTuple):
    images: Tensor  # (n, in_ch, D, H, W)
    labels: np.ndarray  # (n, D, H, W) int64

    def validate(self, num_classes: int) -> None:
        n = self.images.shape[0]
        if self.labels.shape != (n,) + self.images.shape[2:]:
            raise ValueError(f"labels {self.labels.shape} inconsistent with images {self.images.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= num_classes):
            raise ValueError("label values must lie in [0, num_classes)")


def class_intensity(class_id: int, num_classes: int) -> float:
    """Background 0; foreground classes alternate in sign with growing magnitude.

    For three classes this is 0, -1, +1.  Every foreground class then
    differs from background by a nonzero mean, which matters because
    per-voxel layer norm cannot tell a near-zero signal from its noise.
    """
    if class_id == 0:
        return 0.0
    top = math.ceil((num_classes - 1) / 2)
    return (-1.0) ** class_id * math.ceil(class_id / 2) / top


def ellipsoid_mask(shape: tuple, center, radii) -> np.ndarray:
    """Voxels whose integer coordinates satisfy ``sum(((x - c) / r)^2) <= 1``."""
    grids = np.ogrid[tuple(slice(0, s) for s in shape)]
    acc = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
    return acc <= 1.0


def _sample_ellipsoid(rng: np.random.Generator, shape: tuple, class_id: int) -> Ellipsoid:
    lo, hi = RADIUS_RANGE
    radii = tuple(float(rng.uniform(lo * s, hi * s)) for s in shape)
    # keep the whole ellipsoid strictly inside the grid
    center = tuple(float(rng.uniform(r, s - 1 - r)) for r, s in zip(radii, shape))
    return Ellipsoid(class_id, center, radii)


def paint(shape: tuple, ellipsoids: list[Ellipsoid]) -> np.ndarray:
    labels = np.zeros(shape, dtype=np.int64)
    for e in ellipsoids:
        labels[ellipsoid_mask(shape, e.center, e.radii)] = e.class_id
    return labels


def synthetic_volume(seed: int, index: int, shape: tuple, num_classes: int, in_channels: int = 1):
    """One ``(image, labels, ellipsoids)`` triple, a pure function of ``(seed, index)``."""
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    shape = tuple(int(s) for s in shape)
    rng = np.random.default_rng([seed, index])
    min_count = MIN_FRACTION * np.prod(shape)
    while True:
        ellipsoids = [_sample_ellipsoid(rng, shape, c) for c in range(1, num_classes)]
        labels = paint(shape, ellipsoids)
        counts = np.bincount(labels.ravel(), minlength=num_classes)
        if np.all(counts[1:] >= min_count):
            break
    lut = np.array([class_intensity(c, num_classes) for c in range(num_classes)])
    clean = lut[labels]
    image = clean[None] + NOISE_STD * rng.standard_normal((in_channels,) + shape)
    return image.astype(np.float32), labels, ellipsoids


def make_batch(seed: int, start: int, n: int, shape: tuple, num_classes: int,
               in_channels: int = 1) -> SegBatch:
    vols = [synthetic_volume(seed, start + i, shape, num_classes, in_channels) for i in range(n)]
    images = np.stack([v[0] for v in vols])
    labels = np.stack([v[1] for v in vols])
    return SegBatch(Tensor(images), labels)


def gen_synthetic(seed: int, n_volumes: int, shape: tuple, num_classes: int,
                  batch_size: int = 1, in_channels: int = 1, start: int = 0) -> Iterator[SegBatch]:
    """Yield ``ceil(n_volumes / batch_size)`` batches covering volumes ``start .. start + n_volumes``."""
    if any(int(s) % 32 for s in shape):
        raise ValueError(f"volume shape {tuple(shape)} must be divisible by 32")
    for i in range(0, n_volumes, batch_size):
        yield make_batch(seed, start + i, min(batch_size, n_volumes - i), shape, num_classes,
                         in_channels)
