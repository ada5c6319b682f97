"""Tests for box utilities and anchors."""

import math

import pytest
import torch

from groupdet.model.anchors import (
    IGNORED,
    NEGATIVE,
    POSITIVE,
    anchor_count,
    assign_targets,
    build_anchors,
    cell_anchors,
    sample_labels,
)
from groupdet.model.boxes import (
    BoxCoder,
    batched_nms,
    box_iou,
    clip_boxes,
    iou,
    nms,
    remove_small,
)


class TestIoU:
    """Tests for iou and box_iou."""

    def test_identical(self):
        assert iou([0, 0, 4, 4], [0, 0, 4, 4]) == 1.0

    def test_disjoint(self):
        assert iou([0, 0, 1, 1], [2, 2, 3, 3]) == 0.0

    def test_partial(self):
        assert iou([0, 0, 2, 2], [1, 0, 3, 2]) == pytest.approx(1 / 3)

    def test_empty_union(self):
        assert iou([1, 1, 1, 1], [1, 1, 1, 1]) == 0.0

    def test_matrix_matches_scalar(self):
        a = torch.tensor([[0.0, 0.0, 2.0, 2.0], [5.0, 5.0, 9.0, 8.0]])
        b = torch.tensor([[1.0, 0.0, 3.0, 2.0], [0.0, 0.0, 2.0, 2.0], [6.0, 4.0, 7.0, 9.0]])

        matrix = box_iou(a, b)

        for i in range(2):
            for j in range(3):
                assert matrix[i, j].item() == pytest.approx(iou(a[i].tolist(), b[j].tolist()), abs=1e-6)


class TestNMS:
    """Tests for nms."""

    def test_single_box(self):
        assert nms(torch.tensor([[0.0, 0.0, 5.0, 5.0]]), torch.tensor([0.3]), 0.5).tolist() == [0]

    def test_identical_boxes(self):
        boxes = torch.tensor([[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 10.0]])

        assert nms(boxes, torch.tensor([0.9, 0.8]), 0.5).tolist() == [0]

    def test_overlap_and_disjoint(self):
        """The second box overlaps the first at IoU 0.6; the third overlaps nothing."""
        boxes = torch.tensor([[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 6.0], [20.0, 20.0, 30.0, 30.0]])

        keep = nms(boxes, torch.tensor([0.9, 0.8, 0.7]), 0.5)

        assert keep.tolist() == [0, 2]

    def test_threshold_is_strict(self):
        boxes = torch.tensor([[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 5.0]])

        assert nms(boxes, torch.tensor([0.9, 0.8]), 0.5).tolist() == [0, 1]

    def test_score_order(self):
        boxes = torch.tensor([[0.0, 0.0, 1.0, 1.0], [5.0, 5.0, 6.0, 6.0]])

        assert nms(boxes, torch.tensor([0.2, 0.7]), 0.5).tolist() == [1, 0]

    def test_empty(self):
        assert nms(torch.zeros((0, 4)), torch.zeros(0), 0.5).numel() == 0

    def test_batched_keeps_groups_apart(self):
        boxes = torch.tensor([[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 10.0]])

        keep = batched_nms(boxes, torch.tensor([0.9, 0.8]), torch.tensor([0, 1]), 0.5)

        assert sorted(keep.tolist()) == [0, 1]


class TestBoxCoder:
    """Tests for BoxCoder."""

    def test_round_trip(self):
        coder = BoxCoder((10.0, 10.0, 5.0, 5.0))
        reference = torch.tensor([[0.0, 0.0, 10.0, 20.0], [5.0, 5.0, 50.0, 15.0]])
        boxes = torch.tensor([[1.0, 2.0, 12.0, 18.0], [0.0, 0.0, 60.0, 30.0]])

        decoded = coder.decode(coder.encode(boxes, reference), reference)

        assert torch.allclose(decoded, boxes, atol=1e-4)

    def test_identity_is_zero(self):
        box = torch.tensor([[3.0, 4.0, 13.0, 24.0]])

        assert torch.allclose(BoxCoder().encode(box, box), torch.zeros(1, 4))

    def test_decode_clamps_scale(self):
        reference = torch.tensor([[0.0, 0.0, 16.0, 16.0]])

        decoded = BoxCoder().decode(torch.tensor([[0.0, 0.0, 100.0, 100.0]]), reference)

        assert (decoded[0, 2] - decoded[0, 0]).item() == pytest.approx(1000.0, rel=1e-4)

    def test_clip_and_remove_small(self):
        boxes = torch.tensor([[-5.0, -5.0, 20.0, 20.0], [3.0, 3.0, 3.5, 9.0]])

        assert clip_boxes(boxes, 10, 15)[0].tolist() == [0.0, 0.0, 15.0, 10.0]
        assert remove_small(boxes, 1.0).tolist() == [0]


class TestAnchors:
    """Tests for anchor generation."""

    def test_unit_ratio_centered(self):
        anchors = build_anchors([(1, 1)] * 5, strides=(32, 64, 128, 256, 512), ratios=(1.0,))

        assert anchors[0].tolist() == [[0.0, 0.0, 32.0, 32.0]]

    def test_tall_ratio(self):
        """Ratio 4 at size 32 gives a 16 x 64 box of area 1024."""
        (anchor,) = cell_anchors(32, [4.0])
        w, h = (anchor[2] - anchor[0]).item(), (anchor[3] - anchor[1]).item()

        assert (w, h) == pytest.approx((16.0, 64.0))
        assert w * h == pytest.approx(1024.0)

    def test_counts(self):
        shapes = [(2, 2), (3, 1), (1, 1), (1, 1), (1, 1)]

        anchors = build_anchors(shapes)

        assert anchors[0].shape == (20, 4)
        assert sum(a.shape[0] for a in anchors) == anchor_count(shapes, 5) == 5 * (4 + 3 + 1 + 1 + 1)

    def test_order_is_row_column_ratio(self):
        anchors = build_anchors([(2, 2)] + [(1, 1)] * 4, ratios=(1.0, 2.0))[0]
        centers = (anchors[:, :2] + anchors[:, 2:]) / 2

        assert centers[::2].tolist() == [[2.0, 2.0], [6.0, 2.0], [2.0, 6.0], [6.0, 6.0]]

    def test_mismatched_levels(self):
        with pytest.raises(ValueError):
            build_anchors([(1, 1)], strides=(4, 8))


class TestAssignTargets:
    """Tests for assign_targets."""

    def test_exact_match_positive(self):
        gt = torch.tensor([[0.0, 0.0, 10.0, 10.0]])

        result = assign_targets(gt.clone(), gt, 0.7, 0.3)

        assert result.labels.tolist() == [POSITIVE]
        assert torch.allclose(result.targets, torch.zeros(1, 4))

    def test_best_anchor_is_positive(self):
        """A gt's best anchor is positive even below the positive threshold."""
        anchors = torch.tensor([[0.0, 0.0, 10.0, 4.0], [50.0, 50.0, 60.0, 60.0]])
        gt = torch.tensor([[0.0, 0.0, 10.0, 10.0]])

        result = assign_targets(anchors, gt, 0.7, 0.3)

        assert result.labels.tolist() == [POSITIVE, NEGATIVE]

    def test_between_thresholds_ignored(self):
        anchors = torch.tensor([[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 5.0]])
        gt = torch.tensor([[0.0, 0.0, 10.0, 10.0]])

        result = assign_targets(anchors, gt, 0.7, 0.3)

        assert result.labels.tolist() == [POSITIVE, IGNORED]

    def test_without_low_quality(self):
        anchors = torch.tensor([[0.0, 0.0, 10.0, 4.0]])
        gt = torch.tensor([[0.0, 0.0, 10.0, 10.0]])

        result = assign_targets(anchors, gt, 0.5, 0.3, allow_low_quality=False)

        assert result.labels.tolist() == [IGNORED]

    def test_no_ground_truth(self):
        result = assign_targets(torch.rand(6, 4) + torch.tensor([0.0, 0.0, 1.0, 1.0]), torch.zeros((0, 4)), 0.7, 0.3)

        assert result.labels.tolist() == [NEGATIVE] * 6
        assert result.matched.tolist() == [-1] * 6

    def test_targets_encode_matched_gt(self):
        anchors = torch.tensor([[0.0, 0.0, 10.0, 10.0]])
        gt = torch.tensor([[0.0, 0.0, 20.0, 10.0]])

        result = assign_targets(anchors, gt, 0.7, 0.3)

        assert result.targets[0].tolist() == pytest.approx([0.5, 0.0, math.log(2.0), 0.0])


class TestSampleLabels:
    def test_respects_budget_and_seed(self):
        labels = torch.tensor([POSITIVE] * 10 + [NEGATIVE] * 50 + [IGNORED] * 5)

        first = sample_labels(labels, 16, 0.25, torch.Generator().manual_seed(3))
        second = sample_labels(labels, 16, 0.25, torch.Generator().manual_seed(3))

        assert first[0].numel() == 4 and first[1].numel() == 12
        assert all(torch.equal(a, b) for a, b in zip(first, second, strict=True))
        assert bool((labels[first[0]] == POSITIVE).all())

    def test_few_positives_fill_with_negatives(self):
        labels = torch.tensor([POSITIVE] + [NEGATIVE] * 20)

        pos, neg = sample_labels(labels, 8, 0.5, torch.Generator().manual_seed(0))

        assert (pos.numel(), neg.numel()) == (1, 7)
