"""
Box Utilities - IoU, regression coding, NMS and clipping.

All boxes here are (x_min, y_min, x_max, y_max) in pixels.
"""

import math
from collections.abc import Sequence

import torch
from torch import Tensor

BBOX_XFORM_CLIP = math.log(1000.0 / 16)


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """IoU of two xyxy boxes; 0 when the union is empty."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = max(0.0, a[2] - a[0]) * max(0.0, a[3] - a[1])
    area_b = max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def box_area(boxes: Tensor) -> Tensor:
    return (boxes[:, 2] - boxes[:, 0]).clamp(min=0) * (boxes[:, 3] - boxes[:, 1]).clamp(min=0)


def box_iou(boxes1: Tensor, boxes2: Tensor) -> Tensor:
    """(N, M) pairwise IoU; pairs with empty union get 0."""
    lt = torch.max(boxes1[:, None, :2], boxes2[None, :, :2])
    rb = torch.min(boxes1[:, None, 2:], boxes2[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = box_area(boxes1)[:, None] + box_area(boxes2)[None, :] - inter
    return torch.where(union > 0, inter / union.clamp(min=1e-12), torch.zeros_like(inter))


class BoxCoder:
    """
    Encodes boxes as (tx, ty, tw, th) offsets from reference boxes.

    tx = wx * (gx - ax) / aw, tw = ww * log(gw / aw); decoding inverts this
    with dw/dh clamped to log(1000/16).
    """

    def __init__(self, weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)):
        self.weights = weights

    def encode(self, boxes: Tensor, reference: Tensor) -> Tensor:
        wx, wy, ww, wh = self.weights
        aw = reference[:, 2] - reference[:, 0]
        ah = reference[:, 3] - reference[:, 1]
        ax = reference[:, 0] + 0.5 * aw
        ay = reference[:, 1] + 0.5 * ah

        gw = boxes[:, 2] - boxes[:, 0]
        gh = boxes[:, 3] - boxes[:, 1]
        gx = boxes[:, 0] + 0.5 * gw
        gy = boxes[:, 1] + 0.5 * gh

        return torch.stack(
            (
                wx * (gx - ax) / aw,
                wy * (gy - ay) / ah,
                ww * torch.log(gw / aw),
                wh * torch.log(gh / ah),
            ),
            dim=1,
        )

    def decode(self, deltas: Tensor, reference: Tensor) -> Tensor:
        wx, wy, ww, wh = self.weights
        reference = reference.to(deltas.dtype)
        aw = reference[:, 2] - reference[:, 0]
        ah = reference[:, 3] - reference[:, 1]
        ax = reference[:, 0] + 0.5 * aw
        ay = reference[:, 1] + 0.5 * ah

        dx = deltas[:, 0] / wx
        dy = deltas[:, 1] / wy
        dw = (deltas[:, 2] / ww).clamp(max=BBOX_XFORM_CLIP)
        dh = (deltas[:, 3] / wh).clamp(max=BBOX_XFORM_CLIP)

        cx = dx * aw + ax
        cy = dy * ah + ay
        w = torch.exp(dw) * aw
        h = torch.exp(dh) * ah
        return torch.stack((cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h), dim=1)


def nms(boxes: Tensor, scores: Tensor, iou_thresh: float) -> Tensor:
    """
    Greedy NMS returning kept indices in descending score order.

    Equal scores keep the lower index first. A box is suppressed when its
    IoU with a kept box is strictly greater than the threshold.
    """
    if boxes.numel() == 0:
        return torch.empty(0, dtype=torch.long, device=boxes.device)
    order = torch.sort(scores, descending=True, stable=True).indices
    ranked = boxes[order]
    n = order.numel()
    suppressed = torch.zeros(n, dtype=torch.bool, device=boxes.device)
    keep: list[int] = []
    for i in range(n):
        if suppressed[i]:
            continue
        keep.append(i)
        if i + 1 < n:
            suppressed[i + 1:] |= box_iou(ranked[i:i + 1], ranked[i + 1:])[0] > iou_thresh
    return order[torch.tensor(keep, dtype=torch.long, device=order.device)]


def batched_nms(boxes: Tensor, scores: Tensor, groups: Tensor, iou_thresh: float) -> Tensor:
    """NMS applied independently within each group id (e.g. pyramid level)."""
    if boxes.numel() == 0:
        return torch.empty(0, dtype=torch.long, device=boxes.device)
    # Offset boxes per group so groups never overlap
    offsets = groups.to(boxes.dtype) * (boxes.max() + 1)
    return nms(boxes + offsets[:, None], scores, iou_thresh)


def clip_boxes(boxes: Tensor, height: float, width: float) -> Tensor:
    return torch.stack(
        (
            boxes[:, 0].clamp(0, width),
            boxes[:, 1].clamp(0, height),
            boxes[:, 2].clamp(0, width),
            boxes[:, 3].clamp(0, height),
        ),
        dim=1,
    )


def remove_small(boxes: Tensor, min_size: float) -> Tensor:
    """Indices of boxes whose width and height are at least min_size."""
    keep = ((boxes[:, 2] - boxes[:, 0]) >= min_size) & ((boxes[:, 3] - boxes[:, 1]) >= min_size)
    return torch.where(keep)[0]
