"""
Anchors - Per-level anchor grids, target assignment and fg/bg sampling.

Anchors of one level are ordered (row, column, ratio). A ratio is h/w, so
an anchor of size s and ratio r has w = s / sqrt(r), h = s * sqrt(r) and
area s^2.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass

import torch
from torch import Tensor

from groupdet.model.boxes import BoxCoder, box_iou

POSITIVE = 1
NEGATIVE = 0
IGNORED = -1


def cell_anchors(size: float, ratios: Sequence[float]) -> Tensor:
    """(A, 4) anchors centered on the origin."""
    rows = []
    for ratio in ratios:
        w = size / math.sqrt(ratio)
        h = size * math.sqrt(ratio)
        rows.append([-w / 2, -h / 2, w / 2, h / 2])
    return torch.tensor(rows, dtype=torch.float32)


def build_anchors(
    level_shapes: Sequence[tuple[int, int]],
    strides: Sequence[int] = (4, 8, 16, 32, 64),
    sizes: Sequence[float] = (32, 64, 128, 256, 512),
    ratios: Sequence[float] = (0.5, 1.0, 2.0, 4.0, 8.0),
) -> list[Tensor]:
    """
    Anchors for every pyramid level.

    Args:
        level_shapes: (H_i, W_i) of each feature map
        strides: Pixel stride of each level
        sizes: One anchor size per level
        ratios: Height/width ratios shared by all levels

    Returns:
        One (H_i * W_i * len(ratios), 4) xyxy tensor per level, centered at
        ((q + 0.5) * stride, (p + 0.5) * stride)
    """
    if not (len(level_shapes) == len(strides) == len(sizes)):
        raise ValueError("level_shapes, strides and sizes must have one entry per level")

    anchors: list[Tensor] = []
    for (height, width), stride, size in zip(level_shapes, strides, sizes, strict=True):
        base = cell_anchors(size, ratios)
        ys = (torch.arange(height, dtype=torch.float32) + 0.5) * stride
        xs = (torch.arange(width, dtype=torch.float32) + 0.5) * stride
        cy, cx = torch.meshgrid(ys, xs, indexing="ij")
        centers = torch.stack((cx, cy, cx, cy), dim=-1).reshape(-1, 1, 4)
        anchors.append((centers + base[None]).reshape(-1, 4))
    return anchors


# ============================================
# Target Assignment
# ============================================

@dataclass
class AnchorTargets:
    """Per-anchor labels (1 / 0 / -1), matched gt index and regression targets."""

    labels: Tensor
    matched: Tensor
    targets: Tensor


def assign_targets(
    anchors: Tensor,
    gt_boxes: Tensor,
    pos_iou: float,
    neg_iou: float,
    allow_low_quality: bool = True,
    coder: BoxCoder | None = None,
) -> AnchorTargets:
    """
    Label anchors against ground truth.

    An anchor is positive when its IoU with some gt is >= pos_iou, or when it
    is (one of) the best anchors of a gt and allow_low_quality is set.
    Negative when its max IoU < neg_iou; everything else is ignored.
    Targets are (tx, ty, log tw, log th) toward the best-matching gt.
    """
    if not 0.0 < neg_iou <= pos_iou < 1.0:
        raise ValueError(f"need 0 < neg_iou <= pos_iou < 1, got {neg_iou}, {pos_iou}")
    coder = coder or BoxCoder()
    n = anchors.shape[0]

    if gt_boxes.numel() == 0:
        return AnchorTargets(
            labels=torch.full((n,), NEGATIVE, dtype=torch.long, device=anchors.device),
            matched=torch.full((n,), -1, dtype=torch.long, device=anchors.device),
            targets=torch.zeros((n, 4), dtype=anchors.dtype, device=anchors.device),
        )

    overlaps = box_iou(anchors, gt_boxes)
    max_iou, matched = overlaps.max(dim=1)

    labels = torch.full((n,), IGNORED, dtype=torch.long, device=anchors.device)
    labels[max_iou < neg_iou] = NEGATIVE
    labels[max_iou >= pos_iou] = POSITIVE

    if allow_low_quality:
        best_per_gt = overlaps.max(dim=0).values
        # Ties with a gt's best IoU all count; gts with no overlap at all are left unmatched
        ties = (overlaps == best_per_gt[None, :]) & (best_per_gt[None, :] > 0)
        anchor_idx, gt_idx = torch.where(ties)
        labels[anchor_idx] = POSITIVE
        matched[anchor_idx] = gt_idx

    targets = coder.encode(gt_boxes[matched], anchors)
    return AnchorTargets(labels=labels, matched=matched, targets=targets)


def sample_labels(
    labels: Tensor,
    batch_size: int,
    positive_fraction: float,
    generator: torch.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Seeded random subset of positive and negative indices."""
    positive = torch.where(labels == POSITIVE)[0]
    negative = torch.where(labels == NEGATIVE)[0]

    num_pos = min(positive.numel(), int(batch_size * positive_fraction))
    num_neg = min(negative.numel(), batch_size - num_pos)

    perm_pos = torch.randperm(positive.numel(), generator=generator)[:num_pos]
    perm_neg = torch.randperm(negative.numel(), generator=generator)[:num_neg]
    return positive[perm_pos.to(positive.device)], negative[perm_neg.to(negative.device)]


def anchor_count(level_shapes: Sequence[tuple[int, int]], n_ratios: int) -> int:
    return sum(n_ratios * h * w for h, w in level_shapes)
