"""Deeply supervised BCE + Dice objective over multi-resolution heads."""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import require


@dataclass(frozen=True)
class SupervisionWeights:
    """Per-head weights alpha and the Dice mixing factor lambda."""

    alpha: tuple = (1.0, 1.0, 1.0)
    lam: float = 1.0
    dice_eps: float = 1.0
    clamp_delta: float = 1e-7

    def __post_init__(self):
        require(len(self.alpha) >= 1, "alpha must hold at least one weight")
        require(all(a >= 0 for a in self.alpha), "alpha weights must be non-negative")
        require(any(a > 0 for a in self.alpha), "at least one alpha weight must be positive")
        require(self.lam >= 0, "lambda must be non-negative")
        require(self.dice_eps > 0, "dice_eps must be positive")
        require(0 < self.clamp_delta < 0.5, "clamp_delta must be in (0, 0.5)")


def _check_pair(pred, target):
    require(torch.is_tensor(pred) and torch.is_tensor(target),
            "predictions and targets must be tensors")
    require(pred.shape == target.shape,
            f"prediction shape {tuple(pred.shape)} does not match "
            f"target shape {tuple(target.shape)}")
    require(bool(torch.isfinite(pred).all()), "predictions contain non-finite values")


def bce_loss(pred, target, clamp_delta=1e-7):
    """Mean binary cross-entropy on probabilities clamped away from {0, 1}."""
    _check_pair(pred, target)
    p = pred.clamp(clamp_delta, 1.0 - clamp_delta)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()


def dice_loss(pred, target, dice_eps=1.0):
    """Soft Dice loss: 1 - (2 * intersection + eps) / (|p| + |t| + eps)."""
    _check_pair(pred, target)
    inter = (pred * target).sum()
    total = pred.sum() + target.sum()
    return 1.0 - (2.0 * inter + dice_eps) / (total + dice_eps)


def downsample_labels(mask, size):
    """Bilinear resize of a binary mask followed by re-binarization at 0.5."""
    require(torch.is_tensor(mask) and mask.dim() == 4,
            "mask must be a 4D (B, 1, H, W) tensor")
    if mask.shape[-2:] == tuple(size):
        return mask
    soft = F.interpolate(mask.float(), size=size, mode="bilinear",
                         align_corners=False)
    return (soft >= 0.5).to(mask.dtype)


def build_label_pyramid(mask, sizes):
    """One re-binarized target per head resolution, derived from ``mask``."""
    return [downsample_labels(mask, s) for s in sizes]


def deep_supervision_loss(preds, mask, weights: SupervisionWeights = None):
    """Weighted sum over heads of BCE plus lambda-scaled Dice.

    ``preds`` is a PredictionSet or sequence of probability maps, finest
    first; ``mask`` is the full-resolution binary target.
    """
    if weights is None:
        weights = SupervisionWeights()
    heads = list(preds)
    require(len(heads) == len(weights.alpha),
            f"{len(heads)} heads but {len(weights.alpha)} alpha weights")
    targets = build_label_pyramid(mask, [h.shape[-2:] for h in heads])
    total = heads[0].new_zeros(())
    for alpha, head, target in zip(weights.alpha, heads, targets):
        target = target.to(head.dtype)
        term = bce_loss(head, target, weights.clamp_delta) \
            + weights.lam * dice_loss(head, target, weights.dice_eps)
        total = total + alpha * term
    return total
