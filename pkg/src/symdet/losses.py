"""Localization and classification losses for the symmetry heatmap heads.

The localization loss is a focal loss on the sigmoided score map against the
binary ground truth.  The classification loss is a pixel cross-entropy over
the orientation/fold classes where background pixels are down-weighted by a
small factor and the sum is normalized by the total weight.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

PROB_CLAMP = 1e-6


def focal_loss(
    prob: torch.Tensor,
    target: torch.Tensor,
    alpha: float = 0.95,
    gamma: float = 2.0,
) -> torch.Tensor:
    """Mean over pixels of -[a (1-p)^g y log p + (1-a) p^g (1-y) log(1-p)].

    `prob` must already be in (0, 1); it is clamped to [1e-6, 1 - 1e-6].
    """
    if prob.shape != target.shape:
        raise ValueError(f"shape mismatch: prob {tuple(prob.shape)} vs target {tuple(target.shape)}")
    p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = target.to(p.dtype)
    pos = alpha * (1.0 - p) ** gamma * y * torch.log(p)
    neg = (1.0 - alpha) * p**gamma * (1.0 - y) * torch.log(1.0 - p)
    return -(pos + neg).mean()


def weighted_ce(
    logits: torch.Tensor,
    target: torch.Tensor,
    background_weight: float,
    background_index: int | None = None,
) -> torch.Tensor:
    """Pixel cross-entropy; background-class pixels weigh `background_weight`.

    logits: (B, C, H, W); target: (B, H, W) integer class map.  The loss is
    the weight-normalized mean, so with uniform logits it equals log(C)
    regardless of the weighting.
    """
    n_classes = logits.shape[1]
    if background_index is None:
        background_index = n_classes - 1
    if target.min() < 0 or target.max() >= n_classes:
        raise ValueError(
            f"class index out of range: [{int(target.min())}, {int(target.max())}] "
            f"with {n_classes} classes"
        )
    ce = F.cross_entropy(logits, target, reduction="none")
    weights = torch.where(
        target == background_index,
        torch.as_tensor(background_weight, dtype=ce.dtype),
        torch.as_tensor(1.0, dtype=ce.dtype),
    )
    return (ce * weights).sum() / weights.sum()


def head_loss(y_prob, y_gt, s_logits, s_gt, alpha, gamma, bg_weight, use_aux: bool):
    """Per-head total: focal localization plus (optionally) weighted classification."""
    loc = focal_loss(y_prob, y_gt, alpha=alpha, gamma=gamma)
    if not use_aux:
        return loc, {"loc": loc.item()}
    cls = weighted_ce(s_logits, s_gt, bg_weight)
    return loc + cls, {"loc": loc.item(), "cls": cls.item()}
