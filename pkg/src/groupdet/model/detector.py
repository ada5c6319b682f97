"""
Group Detector - Two-stage anchor-based detector with text-layer plug-ins.

Pipeline:
    resize (short side to 800, long side capped at 1300) and pad to 64
    -> stem -> [text fusion] -> residual stages -> FPN (P2..P6)
    -> [box attention per level] -> RPN (softmax objectness, regression, NMS)
    -> RoI Align on P2..P5 -> two FC layers -> class softmax + box regression
    -> score filter, NMS, top max_dets, mapped back to original pixels

Fusion modules are created after every other module, so a baseline and a
fusion model built from the same seed share identical base weights.
"""

import math
import pickle
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import ValidationError
from torch import Tensor, nn

from groupdet.core.config import DetectorConfig, get_logger
from groupdet.core.errors import WeightMismatch
from groupdet.core.types import Detection, TextLayerRecord
from groupdet.model.anchors import NEGATIVE, POSITIVE, assign_targets, build_anchors, sample_labels
from groupdet.model.backbone import Pyramid, build_backbone
from groupdet.model.boxes import BoxCoder, batched_nms, clip_boxes, nms, remove_small
from groupdet.model.fusion import (
    BoxAttention,
    TextFusion,
    batch_box_attention,
    batch_text_maps,
    rescale_texts,
)
from groupdet.model.roi_align import roi_align
from groupdet.model.textenc import TextEncoder, get_encoder

logger = get_logger("model.detector")

CHECKPOINT_FORMAT = 1
SIZE_DIVISIBILITY = 64
IMAGE_MEAN = (0.485, 0.456, 0.406)
IMAGE_STD = (0.229, 0.224, 0.225)
ROI_LEVELS = 4
CANONICAL_SCALE = 224
CANONICAL_LEVEL = 4
SMOOTH_L1_BETA = 1.0 / 9


# ============================================
# Preprocessing
# ============================================

def resize_scale(height: int, width: int, short: int, long: int) -> float:
    """Scale that brings the short side to `short` without the long side exceeding `long`."""
    scale = short / min(height, width)
    if max(height, width) * scale > long:
        scale = long / max(height, width)
    return scale


class ImageMeta:
    """Original size, resized size and the per-axis scale between them."""

    def __init__(self, height: int, width: int, new_height: int, new_width: int):
        self.height = height
        self.width = width
        self.new_height = new_height
        self.new_width = new_width

    @property
    def scale_x(self) -> float:
        return self.new_width / self.width

    @property
    def scale_y(self) -> float:
        return self.new_height / self.height

    def to_resized(self, boxes: Tensor) -> Tensor:
        factors = boxes.new_tensor([self.scale_x, self.scale_y, self.scale_x, self.scale_y])
        return boxes * factors

    def to_original(self, boxes: Tensor) -> Tensor:
        factors = boxes.new_tensor([self.scale_x, self.scale_y, self.scale_x, self.scale_y])
        return clip_boxes(boxes / factors, self.height, self.width)


def image_to_tensor(image: np.ndarray | Tensor) -> Tensor:
    """H x W x 3 uint8 array (or 3 x H x W float tensor in [0,1]) as a float tensor."""
    if isinstance(image, Tensor):
        return image.float()
    return torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1).float() / 255.0


# ============================================
# Heads
# ============================================

class RPNHead(nn.Module):
    """Shared 3x3 conv with 2-way objectness logits and box deltas per anchor."""

    def __init__(self, channels: int, n_anchors: int):
        super().__init__()
        self.n_anchors = n_anchors
        self.conv = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.cls_logits = nn.Conv2d(channels, n_anchors * 2, kernel_size=1)
        self.bbox_pred = nn.Conv2d(channels, n_anchors * 4, kernel_size=1)
        for layer in (self.conv, self.cls_logits, self.bbox_pred):
            nn.init.normal_(layer.weight, std=0.01)
            nn.init.zeros_(layer.bias)

    def forward(self, features: Sequence[Tensor]) -> tuple[list[Tensor], list[Tensor]]:
        logits: list[Tensor] = []
        deltas: list[Tensor] = []
        for feature in features:
            n, _, h, w = feature.shape
            t = torch.relu(self.conv(feature))
            # (N, A*k, H, W) -> (N, H*W*A, k), matching anchor order (row, column, ratio)
            logits.append(
                self.cls_logits(t).view(n, self.n_anchors, 2, h, w).permute(0, 3, 4, 1, 2).reshape(n, -1, 2)
            )
            deltas.append(
                self.bbox_pred(t).view(n, self.n_anchors, 4, h, w).permute(0, 3, 4, 1, 2).reshape(n, -1, 4)
            )
        return logits, deltas


class RoIHead(nn.Module):
    """Two FC layers, then class scores and class-specific box deltas."""

    def __init__(self, in_features: int, representation_size: int, n_classes: int):
        super().__init__()
        self.fc6 = nn.Linear(in_features, representation_size)
        self.fc7 = nn.Linear(representation_size, representation_size)
        self.cls_score = nn.Linear(representation_size, n_classes)
        self.bbox_pred = nn.Linear(representation_size, n_classes * 4)
        nn.init.normal_(self.cls_score.weight, std=0.01)
        nn.init.normal_(self.bbox_pred.weight, std=0.001)
        nn.init.zeros_(self.cls_score.bias)
        nn.init.zeros_(self.bbox_pred.bias)

    def forward(self, pooled: Tensor) -> tuple[Tensor, Tensor]:
        x = torch.relu(self.fc6(pooled.flatten(start_dim=1)))
        x = torch.relu(self.fc7(x))
        return self.cls_score(x), self.bbox_pred(x)


def map_roi_levels(boxes: Tensor, levels: int = ROI_LEVELS) -> Tensor:
    """Pyramid index (0 = P2) for each box: level 4 at 224 px, clamped to P2..P5."""
    scale = torch.sqrt(((boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])).clamp(min=1e-6))
    target = torch.floor(CANONICAL_LEVEL + torch.log2(scale / CANONICAL_SCALE) + 1e-6)
    return (target.clamp(2, 2 + levels - 1) - 2).long()


# ============================================
# Detector
# ============================================

class GroupDetector(nn.Module):
    """
    Faster-RCNN-style group detector.

    In training mode forward() returns the loss dict; in eval mode it
    returns detections per image in original pixel coordinates.
    """

    def __init__(self, config: DetectorConfig, encoder: TextEncoder | None = None):
        super().__init__()
        self.config = config
        channels = config.fpn_channels
        self.n_ratios = len(config.anchor_ratios)

        self.backbone = build_backbone(config)
        self.pyramid = Pyramid(self.backbone.stage_channels, channels)
        self.rpn_head = RPNHead(channels, self.n_ratios)
        self.roi_head = RoIHead(
            channels * config.roi_output * config.roi_output,
            config.representation_size,
            config.n_classes,
        )

        self.text_fusion: TextFusion | None = None
        self.box_attention: BoxAttention | None = None
        if config.uses_text_fusion:
            self.text_fusion = TextFusion(config.text_dim, self.backbone.stem_channels)
        if config.uses_box_attention:
            self.box_attention = BoxAttention(channels, levels=len(config.strides))

        self.encoder = encoder if encoder is not None else (
            get_encoder(config) if config.fusion != "none" else None
        )
        self.rpn_coder = BoxCoder((1.0, 1.0, 1.0, 1.0))
        self.roi_coder = BoxCoder((10.0, 10.0, 5.0, 5.0))
        self.sampler = torch.Generator().manual_seed(config.seed)
        self._anchor_cache: dict[tuple[tuple[int, int], ...], list[Tensor]] = {}

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    # ------------------------------------------
    # Preprocessing
    # ------------------------------------------

    def preprocess(self, images: Sequence[Tensor]) -> tuple[Tensor, list[ImageMeta]]:
        """Resize, normalize and zero-pad a batch to a multiple of 64."""
        short, long = self.config.resize
        mean = torch.tensor(IMAGE_MEAN, device=self.device)[:, None, None]
        std = torch.tensor(IMAGE_STD, device=self.device)[:, None, None]

        resized: list[Tensor] = []
        metas: list[ImageMeta] = []
        for image in images:
            _, h, w = image.shape
            scale = resize_scale(h, w, short, long)
            new_h, new_w = max(round(h * scale), 1), max(round(w * scale), 1)
            x = image.to(self.device)
            if (new_h, new_w) != (h, w):
                x = F.interpolate(x[None], size=(new_h, new_w), mode="bilinear", align_corners=False)[0]
            resized.append((x - mean) / std)
            metas.append(ImageMeta(h, w, new_h, new_w))

        pad_h = math.ceil(max(m.new_height for m in metas) / SIZE_DIVISIBILITY) * SIZE_DIVISIBILITY
        pad_w = math.ceil(max(m.new_width for m in metas) / SIZE_DIVISIBILITY) * SIZE_DIVISIBILITY
        batch = torch.zeros((len(images), 3, pad_h, pad_w), device=self.device)
        for i, x in enumerate(resized):
            batch[i, :, : x.shape[1], : x.shape[2]] = x
        return batch, metas

    # ------------------------------------------
    # Features
    # ------------------------------------------

    def extract_features(
        self,
        batch: Tensor,
        metas: Sequence[ImageMeta],
        texts: Sequence[Sequence[TextLayerRecord]],
    ) -> list[Tensor]:
        """The five pyramid maps (after box attention when enabled)."""
        _, _, pad_h, pad_w = batch.shape
        canvas_texts = [
            rescale_texts(t, m.new_width / pad_w, m.new_height / pad_h)
            for t, m in zip(texts, metas, strict=True)
        ]

        stem = self.backbone.stem(batch)
        if self.text_fusion is not None:
            text_map = batch_text_maps(canvas_texts, self.config.text_dim, pad_h, pad_w, self.encoder)
            stem = self.text_fusion(stem, text_map.to(stem.device))

        features = self.pyramid(self.backbone.forward_stages(stem))
        if self.box_attention is not None:
            shapes = [(int(f.shape[-2]), int(f.shape[-1])) for f in features]
            attention = batch_box_attention(canvas_texts, shapes)
            features = self.box_attention(features, [a.to(batch.device) for a in attention])
        return features

    def anchors_for(self, features: Sequence[Tensor]) -> list[Tensor]:
        shapes = tuple((int(f.shape[-2]), int(f.shape[-1])) for f in features)
        if shapes not in self._anchor_cache:
            self._anchor_cache[shapes] = build_anchors(
                shapes, self.config.strides, self.config.anchor_sizes, self.config.anchor_ratios
            )
        return [a.to(features[0].device) for a in self._anchor_cache[shapes]]

    # ------------------------------------------
    # Region Proposals
    # ------------------------------------------

    def propose(
        self,
        anchors: Sequence[Tensor],
        logits: Sequence[Tensor],
        deltas: Sequence[Tensor],
        metas: Sequence[ImageMeta],
    ) -> list[Tensor]:
        """Top proposals per image after per-level top-k and NMS."""
        pre_nms = self.config.rpn_pre_nms_train if self.training else self.config.rpn_pre_nms_test
        post_nms = self.config.rpn_post_nms_train if self.training else self.config.rpn_post_nms_test

        proposals: list[Tensor] = []
        for i, meta in enumerate(metas):
            boxes_all, scores_all, levels_all = [], [], []
            for level, (level_anchors, level_logits, level_deltas) in enumerate(
                zip(anchors, logits, deltas, strict=True)
            ):
                objectness = torch.softmax(level_logits[i].detach(), dim=-1)[:, 1]
                k = min(pre_nms, objectness.numel())
                scores, top = torch.topk(objectness, k, sorted=True)
                boxes = self.rpn_coder.decode(level_deltas[i, top].detach(), level_anchors[top])
                boxes_all.append(clip_boxes(boxes, meta.new_height, meta.new_width))
                scores_all.append(scores)
                levels_all.append(torch.full_like(scores, level, dtype=torch.long))

            boxes = torch.cat(boxes_all)
            scores = torch.cat(scores_all)
            levels = torch.cat(levels_all)
            keep = remove_small(boxes, 1e-3)
            boxes, scores, levels = boxes[keep], scores[keep], levels[keep]
            keep = batched_nms(boxes, scores, levels, self.config.rpn_nms_iou)[:post_nms]
            proposals.append(boxes[keep])
        return proposals

    def rpn_loss(
        self,
        anchors: Sequence[Tensor],
        logits: Sequence[Tensor],
        deltas: Sequence[Tensor],
        gt_boxes: Sequence[Tensor],
    ) -> tuple[Tensor, Tensor]:
        all_anchors = torch.cat(list(anchors))
        all_logits = torch.cat(list(logits), dim=1)
        all_deltas = torch.cat(list(deltas), dim=1)

        cls_losses, box_losses, n_sampled = [], [], 0
        for i, gt in enumerate(gt_boxes):
            targets = assign_targets(
                all_anchors, gt, self.config.rpn_pos_iou, self.config.rpn_neg_iou, coder=self.rpn_coder
            )
            pos, neg = sample_labels(
                targets.labels, self.config.rpn_batch_size, self.config.rpn_pos_fraction, self.sampler
            )
            sampled = torch.cat([pos, neg])
            n_sampled += sampled.numel()
            cls_losses.append(
                F.cross_entropy(all_logits[i, sampled], targets.labels[sampled], reduction="sum")
            )
            box_losses.append(
                F.smooth_l1_loss(
                    all_deltas[i, pos], targets.targets[pos], beta=SMOOTH_L1_BETA, reduction="sum"
                )
            )
        denominator = max(n_sampled, 1)
        return torch.stack(cls_losses).sum() / denominator, torch.stack(box_losses).sum() / denominator

    # ------------------------------------------
    # RoI Stage
    # ------------------------------------------

    def pool(self, features: Sequence[Tensor], proposals: Sequence[Tensor]) -> Tensor:
        """RoI Align each proposal on its mapped pyramid level (P2..P5)."""
        rois = torch.cat(
            [torch.cat([torch.full_like(p[:, :1], i), p], dim=1) for i, p in enumerate(proposals)]
        )
        size = self.config.roi_output
        pooled = features[0].new_zeros((rois.shape[0], features[0].shape[1], size, size))
        if rois.shape[0] == 0:
            return pooled
        levels = map_roi_levels(rois[:, 1:])
        for level in range(ROI_LEVELS):
            idx = torch.where(levels == level)[0]
            if idx.numel():
                pooled[idx] = roi_align(
                    features[level],
                    rois[idx],
                    output_size=size,
                    spatial_scale=1.0 / self.config.strides[level],
                    sampling_ratio=2,
                    aligned=True,
                )
        return pooled

    def sample_proposals(
        self,
        proposals: Sequence[Tensor],
        gt_boxes: Sequence[Tensor],
    ) -> tuple[list[Tensor], Tensor, Tensor]:
        """Seeded fg/bg sample of proposals (gt boxes appended) with class and box targets."""
        sampled_boxes, labels_all, targets_all = [], [], []
        for props, gt in zip(proposals, gt_boxes, strict=True):
            candidates = torch.cat([props, gt]) if gt.numel() else props
            assigned = assign_targets(
                candidates,
                gt,
                self.config.roi_pos_iou,
                self.config.roi_pos_iou,
                allow_low_quality=False,
                coder=self.roi_coder,
            )
            pos, neg = sample_labels(
                assigned.labels, self.config.roi_batch_size, self.config.roi_pos_fraction, self.sampler
            )
            keep = torch.cat([pos, neg])
            labels = (assigned.labels[keep] == POSITIVE).long()
            sampled_boxes.append(candidates[keep])
            labels_all.append(labels)
            targets_all.append(assigned.targets[keep])
        return sampled_boxes, torch.cat(labels_all), torch.cat(targets_all)

    def roi_loss(self, class_logits: Tensor, box_deltas: Tensor, labels: Tensor, targets: Tensor) -> tuple[Tensor, Tensor]:
        cls_loss = F.cross_entropy(class_logits, labels)
        fg = torch.where(labels > NEGATIVE)[0]
        per_class = box_deltas.reshape(box_deltas.shape[0], -1, 4)
        box_loss = F.smooth_l1_loss(
            per_class[fg, labels[fg]], targets[fg], beta=SMOOTH_L1_BETA, reduction="sum"
        ) / max(labels.numel(), 1)
        return cls_loss, box_loss

    def postprocess(
        self,
        class_logits: Tensor,
        box_deltas: Tensor,
        proposals: Sequence[Tensor],
        metas: Sequence[ImageMeta],
    ) -> list[list[Detection]]:
        probs = torch.softmax(class_logits, dim=-1)
        per_class = box_deltas.reshape(box_deltas.shape[0], -1, 4)
        counts = [p.shape[0] for p in proposals]

        results: list[list[Detection]] = []
        for props, image_probs, image_deltas, meta in zip(
            proposals, probs.split(counts), per_class.split(counts), metas, strict=True
        ):
            boxes_all, scores_all, classes_all = [], [], []
            for category in range(1, self.config.n_classes):
                boxes = self.roi_coder.decode(image_deltas[:, category], props)
                boxes = clip_boxes(boxes, meta.new_height, meta.new_width)
                scores = image_probs[:, category]
                keep = torch.where(scores > self.config.score_thresh)[0]
                boxes, scores = boxes[keep], scores[keep]
                keep = remove_small(boxes, 1e-2)
                boxes, scores = boxes[keep], scores[keep]
                keep = nms(boxes, scores, self.config.nms_iou)
                boxes_all.append(boxes[keep])
                scores_all.append(scores[keep])
                classes_all.append(torch.full_like(keep, category))

            boxes = torch.cat(boxes_all)
            scores = torch.cat(scores_all)
            classes = torch.cat(classes_all)
            order = torch.sort(scores, descending=True, stable=True).indices[: self.config.max_dets]
            original = meta.to_original(boxes[order])
            results.append([
                Detection(
                    bbox=[float(x1), float(y1), float(x2 - x1), float(y2 - y1)],
                    score=min(max(float(s), 0.0), 1.0),
                    category_id=int(c),
                )
                for (x1, y1, x2, y2), s, c in zip(
                    original.tolist(), scores[order].tolist(), classes[order].tolist(), strict=True
                )
            ])
        return results

    # ------------------------------------------
    # Forward
    # ------------------------------------------

    def forward(
        self,
        images: Sequence[Tensor],
        texts: Sequence[Sequence[TextLayerRecord]],
        gt_boxes: Sequence[Tensor] | None = None,
    ) -> dict[str, Tensor] | list[list[Detection]]:
        """
        Args:
            images: 3 x H x W float tensors in [0,1]
            texts: Text records per image, normalized to that image
            gt_boxes: (G, 4) xyxy boxes per image in original pixels; required in training mode
        """
        batch, metas = self.preprocess(images)
        features = self.extract_features(batch, metas, texts)
        anchors = self.anchors_for(features)
        logits, deltas = self.rpn_head(features)
        proposals = self.propose(anchors, logits, deltas, metas)

        if self.training:
            if gt_boxes is None:
                raise ValueError("gt_boxes are required in training mode")
            resized_gt = [m.to_resized(g.to(self.device).float()) for g, m in zip(gt_boxes, metas, strict=True)]
            loss_objectness, loss_rpn_box = self.rpn_loss(anchors, logits, deltas, resized_gt)
            sampled, labels, targets = self.sample_proposals(proposals, resized_gt)
            class_logits, box_deltas = self.roi_head(self.pool(features, sampled))
            loss_classifier, loss_box_reg = self.roi_loss(class_logits, box_deltas, labels, targets)
            return {
                "loss_objectness": loss_objectness,
                "loss_rpn_box": loss_rpn_box,
                "loss_classifier": loss_classifier,
                "loss_box_reg": loss_box_reg,
            }

        class_logits, box_deltas = self.roi_head(self.pool(features, proposals))
        return self.postprocess(class_logits, box_deltas, proposals, metas)

    @torch.no_grad()
    def predict(self, image: np.ndarray | Tensor, texts: Sequence[TextLayerRecord] = ()) -> list[Detection]:
        """Detections for one image in its original pixel coordinates."""
        was_training = self.training
        self.eval()
        try:
            detections = self([image_to_tensor(image)], [list(texts)])
        finally:
            self.train(was_training)
        assert isinstance(detections, list)
        return detections[0]


# ============================================
# Checkpoints
# ============================================

def save_checkpoint(model: GroupDetector, path: Path, extra: Mapping[str, Any] | None = None) -> Path:
    """Single-file container: format version, config echo and named tensors."""
    path.parent.mkdir(parents=True, exist_ok=True)
    payload: dict[str, Any] = {
        "format_version": CHECKPOINT_FORMAT,
        "config": model.config.model_dump(mode="json"),
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
    }
    if extra:
        payload.update(extra)
    torch.save(payload, path)
    return path


def read_checkpoint(path: Path) -> dict[str, Any]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as e:
        raise WeightMismatch(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_FORMAT:
        raise WeightMismatch(f"{path} is not a format {CHECKPOINT_FORMAT} checkpoint")
    return payload


def load_weights(model: GroupDetector, state_dict: Mapping[str, Tensor]) -> GroupDetector:
    try:
        model.load_state_dict(dict(state_dict), strict=True)
    except RuntimeError as e:
        raise WeightMismatch(f"weights do not fit the configured detector: {e}") from e
    return model


def load_checkpoint(path: Path, config: DetectorConfig | None = None) -> GroupDetector:
    """
    Rebuild a detector from a checkpoint.

    The stored config is used unless one is given; a given config must be
    shape-compatible with the stored weights.
    """
    payload = read_checkpoint(path)
    if config is None:
        try:
            config = DetectorConfig.model_validate(payload["config"])
        except (KeyError, ValidationError) as e:
            raise WeightMismatch(f"checkpoint {path} has no valid config: {e}") from e
    model = load_weights(GroupDetector(config), payload["state_dict"])
    model.eval()
    return model


def detect(
    image: np.ndarray,
    texts: Sequence[TextLayerRecord],
    config: DetectorConfig,
    weights: Mapping[str, Tensor] | Path,
) -> list[Detection]:
    """One-shot inference: build the configured detector, load weights, predict."""
    state = read_checkpoint(weights)["state_dict"] if isinstance(weights, Path) else weights
    model = load_weights(GroupDetector(config), state)
    return model.predict(image, texts)
