"""Soft Dice loss over softmax probabilities and the hard Dice metric."""
from __future__ import annotations

import numpy as np

from .nn.functional import softmax_channels
from .nn.tensor import ShapeMismatch, Tensor, as_tensor
from .volume import Volume, require_binary, require_same_dims

SMOOTH_NR = 1e-5
SMOOTH_DR = 1e-5


def one_hot(mask: np.ndarray, num_classes: int = 2) -> np.ndarray:
    """(N, D, H, W) integer labels -> (N, C, D, H, W) float32 one-hot."""
    mask = np.asarray(mask)
    return np.stack([(mask == c) for c in range(num_classes)], axis=1).astype(np.float32)


def dice_loss(logits: Tensor, target, smooth_nr: float = SMOOTH_NR, smooth_dr: float = SMOOTH_DR) -> Tensor:
    """1 - mean over (batch, channel) of (2*sum(p*g) + nr) / (sum(p) + sum(g) + dr).

    ``p`` is the channel softmax of ``logits``; both channels count and
    the denominator is not squared.
    """
    logits = as_tensor(logits)
    g = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float32)
    if logits.shape != g.shape:
        raise ShapeMismatch(f"logits {logits.shape} vs target {g.shape}")
    if logits.data.ndim != 5:
        raise ShapeMismatch(f"expected (N, C, D, H, W), got {logits.shape}")
    p = softmax_channels(logits)
    axes = (2, 3, 4)
    inter = (p * g).sum(axis=axes)
    denom = p.sum(axis=axes) + g.sum(axis=axes, dtype=np.float64).astype(np.float32)
    dice = (inter * 2.0 + smooth_nr) / (denom + smooth_dr)
    return 1.0 - dice.mean()


def _hard_dice(a: np.ndarray, b: np.ndarray) -> float:
    a = a.astype(bool)
    b = b.astype(bool)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def dice_metric(pred: Volume, truth: Volume) -> float:
    """2|A and B| / (|A| + |B|); 1.0 when both are empty."""
    require_same_dims(pred, truth)
    require_binary(pred, "pred")
    require_binary(truth, "truth")
    return _hard_dice(pred.data, truth.data)


def dice_both_channels(pred: Volume, truth: Volume) -> float:
    """Mean of foreground and background Dice."""
    require_same_dims(pred, truth)
    fg = _hard_dice(pred.data, truth.data)
    bg = _hard_dice(pred.data == 0, truth.data == 0)
    return 0.5 * (fg + bg)


def argmax_mask(logits: np.ndarray) -> np.ndarray:
    """Foreground mask from (N, 2, ...) logits; ties go to background."""
    return (np.argmax(logits, axis=1) == 1).astype(np.uint8)
