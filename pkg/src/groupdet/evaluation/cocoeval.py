"""
COCO Evaluation - Self-contained COCO-style AP for group detections.

Per IoU threshold t in 0.50:0.05:0.95 detections are ranked by score and
greedily matched to the unmatched gt with the highest IoU >= t (equal IoU
goes to the lower gt index). Precision is made monotone from the right and
sampled at 101 recall points. Scale buckets filter gt by area:
small < 32^2, medium [32^2, 96^2), large >= 96^2. A bucket without any gt
reports -1.
"""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from groupdet.core.config import get_logger
from groupdet.core.errors import UnknownImageId
from groupdet.core.types import DatasetManifest, Detection, EvalReport

logger = get_logger("evaluation.cocoeval")

IOU_THRESHOLDS = np.round(np.arange(50, 100, 5) / 100, 2)
RECALL_THRESHOLDS = np.round(np.linspace(0.0, 1.0, 101), 2)
AREA_RANGES: dict[str, tuple[float, float]] = {
    "all": (0.0, float("inf")),
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, float("inf")),
}
MAX_DETS = 100


def iou_matrix(dets: NDArray[np.float64], gts: NDArray[np.float64]) -> NDArray[np.float64]:
    """(D, G) IoU between [x, y, w, h] boxes; 0 where the union is empty."""
    if len(dets) == 0 or len(gts) == 0:
        return np.zeros((len(dets), len(gts)))
    d = dets[:, None, :]
    g = gts[None, :, :]
    iw = np.clip(np.minimum(d[..., 0] + d[..., 2], g[..., 0] + g[..., 2]) - np.maximum(d[..., 0], g[..., 0]), 0, None)
    ih = np.clip(np.minimum(d[..., 1] + d[..., 3], g[..., 1] + g[..., 3]) - np.maximum(d[..., 1], g[..., 1]), 0, None)
    inter = iw * ih
    union = d[..., 2] * d[..., 3] + g[..., 2] * g[..., 3] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def _in_range(area: float, area_range: tuple[float, float]) -> bool:
    lo, hi = area_range
    return lo <= area < hi


@dataclass
class ImageEval:
    """Matching result of one image for one area range."""

    scores: NDArray[np.float64]
    """(D,) scores of the kept detections, descending."""

    det_matched: NDArray[np.bool_]
    """(T, D) detection matched at threshold t."""

    det_ignored: NDArray[np.bool_]
    """(T, D) detection excluded from the PR curve."""

    n_gt: int
    """Number of non-ignored gt."""


def evaluate_image(
    gt_boxes: NDArray[np.float64],
    gt_areas: NDArray[np.float64],
    det_boxes: NDArray[np.float64],
    det_scores: NDArray[np.float64],
    area_range: tuple[float, float],
    max_dets: int = MAX_DETS,
) -> ImageEval:
    gt_ignore = np.array([not _in_range(a, area_range) for a in gt_areas], dtype=bool)
    # Non-ignored gt first, original order kept within each part
    gt_order = np.argsort(gt_ignore, kind="mergesort")
    gt_boxes = gt_boxes[gt_order]
    gt_ignore = gt_ignore[gt_order]

    det_order = np.argsort(-det_scores, kind="mergesort")[:max_dets]
    det_boxes = det_boxes[det_order]
    det_scores = det_scores[det_order]

    ious = iou_matrix(det_boxes, gt_boxes)
    n_thr, n_det, n_gt = len(IOU_THRESHOLDS), len(det_boxes), len(gt_boxes)
    gt_taken = np.zeros((n_thr, n_gt), dtype=bool)
    det_matched = np.zeros((n_thr, n_det), dtype=bool)
    det_ignored = np.zeros((n_thr, n_det), dtype=bool)

    for t_index, threshold in enumerate(IOU_THRESHOLDS):
        for d in range(n_det):
            best_iou = min(threshold, 1 - 1e-10)
            match = -1
            for g in range(n_gt):
                if gt_taken[t_index, g]:
                    continue
                # Stop at ignored gt once a regular gt is matched
                if match > -1 and not gt_ignore[match] and gt_ignore[g]:
                    break
                if ious[d, g] < best_iou or (match > -1 and ious[d, g] == best_iou):
                    continue
                best_iou = ious[d, g]
                match = g
            if match == -1:
                continue
            gt_taken[t_index, match] = True
            det_matched[t_index, d] = True
            det_ignored[t_index, d] = gt_ignore[match]

    det_out_of_range = np.array(
        [not _in_range(w * h, area_range) for _, _, w, h in det_boxes], dtype=bool
    ).reshape(1, n_det)
    det_ignored |= ~det_matched & det_out_of_range

    return ImageEval(
        scores=det_scores,
        det_matched=det_matched,
        det_ignored=det_ignored,
        n_gt=int((~gt_ignore).sum()),
    )


def accumulate(evals: Sequence[ImageEval]) -> NDArray[np.float64]:
    """(T, R) interpolated precision; all -1 when there is no gt."""
    precision = -np.ones((len(IOU_THRESHOLDS), len(RECALL_THRESHOLDS)))
    n_gt = sum(e.n_gt for e in evals)
    if n_gt == 0:
        return precision

    scores = np.concatenate([e.scores for e in evals]) if evals else np.zeros(0)
    order = np.argsort(-scores, kind="mergesort")
    matched = np.concatenate([e.det_matched for e in evals], axis=1)[:, order]
    ignored = np.concatenate([e.det_ignored for e in evals], axis=1)[:, order]

    tps = np.logical_and(matched, ~ignored)
    fps = np.logical_and(~matched, ~ignored)
    tp_sum = np.cumsum(tps, axis=1).astype(np.float64)
    fp_sum = np.cumsum(fps, axis=1).astype(np.float64)

    for t_index in range(len(IOU_THRESHOLDS)):
        tp, fp = tp_sum[t_index], fp_sum[t_index]
        recall = tp / n_gt
        pr = tp / np.maximum(tp + fp, np.spacing(1))
        # Monotone envelope from the right
        pr = np.maximum.accumulate(pr[::-1])[::-1] if len(pr) else pr
        interpolated = np.zeros(len(RECALL_THRESHOLDS))
        indices = np.searchsorted(recall, RECALL_THRESHOLDS, side="left")
        valid = indices < len(pr)
        interpolated[valid] = pr[indices[valid]]
        precision[t_index] = interpolated
    return precision


def _mean_ap(precision: NDArray[np.float64]) -> float:
    valid = precision[precision > -1]
    return float(valid.mean()) if valid.size else -1.0


def evaluate(
    gts: DatasetManifest,
    dets: Mapping[int, Sequence[Detection]],
    max_dets: int = MAX_DETS,
) -> EvalReport:
    """
    COCO-style AP of detections against a manifest's group annotations.

    Args:
        gts: Ground-truth manifest
        dets: Detections keyed by image id; missing images have none
        max_dets: Detections kept per image, highest scores first

    Raises:
        UnknownImageId: a detection key is not an image of the manifest
    """
    known = {img.id for img in gts.images}
    unknown = sorted(set(dets) - known)
    if unknown:
        raise UnknownImageId(f"detections reference unknown image ids {unknown[:5]}")

    per_range: dict[str, NDArray[np.float64]] = {}
    for name, area_range in AREA_RANGES.items():
        evals: list[ImageEval] = []
        for image in gts.images:
            anns = gts.annotations_for(image.id)
            image_dets = dets.get(image.id, [])
            if not anns and not image_dets:
                continue
            evals.append(
                evaluate_image(
                    gt_boxes=np.array([a.bbox for a in anns], dtype=np.float64).reshape(-1, 4),
                    gt_areas=np.array([a.area for a in anns], dtype=np.float64),
                    det_boxes=np.array([d.bbox for d in image_dets], dtype=np.float64).reshape(-1, 4),
                    det_scores=np.array([d.score for d in image_dets], dtype=np.float64),
                    area_range=area_range,
                    max_dets=max_dets,
                )
            )
        per_range[name] = accumulate(evals)

    overall = per_range["all"]
    report = EvalReport(
        ap=_mean_ap(overall),
        ap50=_mean_ap(overall[IOU_THRESHOLDS == 0.5]),
        ap75=_mean_ap(overall[IOU_THRESHOLDS == 0.75]),
        ap_s=_mean_ap(per_range["small"]),
        ap_m=_mean_ap(per_range["medium"]),
        ap_l=_mean_ap(per_range["large"]),
    )
    logger.debug(f"Evaluated {len(gts.images)} images: {report.to_coco_json()}")
    return report
