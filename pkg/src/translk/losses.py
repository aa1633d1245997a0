"""Joint cross-entropy + soft Dice loss and the Dice similarity coefficient."""
from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor

DICE_SMOOTH = 1e-5


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """``(n, d, h, w)`` integer labels -> ``(n, K, d, h, w)`` indicator volume."""
    classes = np.arange(num_classes).reshape((1, num_classes) + (1,) * (labels.ndim - 1))
    return (labels[:, None] == classes).astype(dtype)


def _check_labels(logits: Tensor, labels: np.ndarray) -> None:
    n, k = logits.shape[:2]
    if labels.shape != (n,) + logits.shape[2:]:
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label values must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    _check_labels(logits, labels)
    y = one_hot(labels, logits.shape[1], logits.dtype)
    nll = ops.mul(ops.log_softmax(logits, axis=1), y)
    return ops.scale(ops.sum(nll), -1.0 / labels.size)


def soft_dice_loss(logits: Tensor, labels: np.ndarray, smooth: float = DICE_SMOOTH) -> Tensor:
    """``1 - mean_k (2 sum p_k y_k + eps) / (sum p_k + sum y_k + eps)``.

    Sums run over the batch and all voxels; every class, background
    included, enters the mean.
    """
    _check_labels(logits, labels)
    k = logits.shape[1]
    y = one_hot(labels, k, logits.dtype)
    red = (0,) + tuple(range(2, logits.ndim))
    p = ops.softmax(logits, axis=1)
    inter = ops.sum(ops.mul(p, y), axis=red)
    denom = ops.add(ops.sum(p, axis=red), y.sum(axis=red) + smooth)
    per_class = ops.div(ops.add(ops.scale(inter, 2.0), smooth), denom)
    return ops.sub(1.0, ops.mean(per_class))


def dice_ce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    return ops.add(cross_entropy(logits, labels), soft_dice_loss(logits, labels))


def dsc(pred: np.ndarray, true: np.ndarray, class_id: int) -> float:
    """Hard Dice ``2|A & B| / (|A| + |B|)`` for one class; 1.0 when both masks are empty."""
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {true.shape}")
    a = pred == class_id
    b = true == class_id
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total
