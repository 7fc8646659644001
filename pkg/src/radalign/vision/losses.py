"""Pooling, classification head and supervised losses (torch, any float dtype)."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

PROB_EPS = 1e-7


def global_average_pool(feature_map: torch.Tensor) -> torch.Tensor:
    """Mean over the spatial axes: (..., c, h, w, d) -> (..., c)."""
    if feature_map.dim() < 4 or any(s == 0 for s in feature_map.shape[-3:]):
        raise ValueError(f"feature map needs three non-empty spatial axes, got {tuple(feature_map.shape)}")
    return feature_map.mean(dim=(-3, -2, -1))


def classify(z: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Sigmoid of the affine map ``weight @ z + bias``; ``z`` may carry a batch axis."""
    if weight.dim() != 2 or z.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ValueError(f"classifier shapes disagree: z {tuple(z.shape)}, W {tuple(weight.shape)}, b {tuple(bias.shape)}")
    return torch.sigmoid(z @ weight.T + bias)


def _check_targets(y: torch.Tensor) -> None:
    if torch.any(y < 0) or torch.any(y > 1):
        raise ValueError("targets must lie in [0, 1]")


def bce_loss(p: torch.Tensor, y: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Binary cross-entropy on probabilities with equal positive/negative weighting.

    ``p`` is clamped to [1e-7, 1 - 1e-7] before the logs.
    """
    y = torch.as_tensor(y, dtype=p.dtype)
    _check_targets(y)
    if p.shape != y.shape:
        raise ValueError(f"prediction shape {tuple(p.shape)} != target shape {tuple(y.shape)}")
    p = p.clamp(PROB_EPS, 1.0 - PROB_EPS)
    terms = -(y * torch.log(p) + (1.0 - y) * torch.log1p(-p))
    if reduction == "sum":
        return terms.sum()
    if reduction == "mean":
        return terms.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def bce_with_logits(logits: torch.Tensor, y: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Same objective as :func:`bce_loss` computed from logits, for training stability."""
    y = torch.as_tensor(y, dtype=logits.dtype)
    _check_targets(y)
    return F.binary_cross_entropy_with_logits(logits, y, reduction=reduction)


def smooth_labels(y, epsilon: float = 0.1):
    """Symmetric binary label smoothing ``y * (1 - eps) + eps / 2``."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must lie in [0, 1)")
    if not isinstance(y, torch.Tensor):
        y = np.asarray(y, dtype=np.float64)
        if np.any(y < 0) or np.any(y > 1):
            raise ValueError("targets must lie in [0, 1]")
    else:
        _check_targets(y)
    return y * (1.0 - epsilon) + epsilon / 2.0


def binary_entropy(p) -> float:
    p = float(p)
    if p in (0.0, 1.0):
        return 0.0
    return -(p * math.log(p) + (1 - p) * math.log(1 - p))


def aux_seg_loss(mask_logits: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
    """Mean voxelwise sigmoid BCE over structures and voxels."""
    masks = torch.as_tensor(masks, dtype=mask_logits.dtype)
    if mask_logits.shape != masks.shape:
        raise ValueError(f"mask logits {tuple(mask_logits.shape)} and masks {tuple(masks.shape)} differ")
    return F.binary_cross_entropy_with_logits(mask_logits, masks, reduction="mean")
