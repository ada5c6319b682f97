"""Tests for text fusion and box attention."""

import numpy as np
import pytest
import torch
from torch.func import functional_call

from groupdet.core.errors import ShapeMismatch
from groupdet.core.types import TextLayerRecord
from groupdet.model.fusion import (
    BoxAttention,
    TextFusion,
    batch_box_attention,
    build_box_attention,
    build_text_map,
    pixel_block,
    rescale_texts,
    text_fusion_forward,
)
from groupdet.model.textenc import HashedNgramEncoder


def _text(content: str, bbox) -> TextLayerRecord:
    return TextLayerRecord(content=content, bbox=tuple(bbox))


def _random_texts(rng: np.random.Generator, n: int) -> list[TextLayerRecord]:
    texts = []
    for i in range(n):
        x0, y0 = rng.uniform(0, 0.95, size=2)
        x1 = rng.uniform(x0 + 0.01, 1.0)
        y1 = rng.uniform(y0 + 0.01, 1.0)
        texts.append(_text(f"t{i}", (x0, y0, x1, y1)))
    return texts


def _coverage_oracle(texts, height: int, width: int) -> np.ndarray:
    """Per-pixel count of boxes whose scaled extent overlaps the pixel cell."""
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    count = np.zeros((height, width))
    for t in texts:
        x0, y0, x1, y1 = t.bbox
        inside_rows = (rows + 1 > y0 * height) & (rows < y1 * height)
        inside_cols = (cols + 1 > x0 * width) & (cols < x1 * width)
        count += inside_rows & inside_cols
    return count / len(texts)


class TestPixelBlock:
    def test_full_cover(self):
        assert pixel_block((0.0, 0.0, 1.0, 1.0), 4, 8) == (0, 4, 0, 8)

    def test_thin_box_marks_one_row(self):
        r0, r1, _, _ = pixel_block((0.1, 0.5, 0.2, 0.5), 10, 10)

        assert (r0, r1) == (5, 6)

    def test_monotone(self):
        """
        Shrinking a box never adds covered pixels.

        Excluded: a zero-extent box lying exactly on a grid line, which marks
        the cell after the line (see the test below).
        """
        rng = np.random.default_rng(4)
        for _ in range(200):
            x0, x1 = sorted(rng.uniform(0, 1, size=2))
            y0, y1 = sorted(rng.uniform(0, 1, size=2))
            if x1 - x0 < 0.02 or y1 - y0 < 0.02:
                continue
            outer = pixel_block((x0, y0, x1, y1), 13, 17)
            inner = pixel_block((x0 + 0.01, y0 + 0.01, x1 - 0.01, y1 - 0.01), 13, 17)
            assert outer[0] <= inner[0] and inner[1] <= outer[1]
            assert outer[2] <= inner[2] and inner[3] <= outer[3]

            px, py = rng.uniform(x0, x1), rng.uniform(y0, y1)
            point = pixel_block((px, py, px, py), 13, 17)
            assert outer[0] <= point[0] and point[1] <= outer[1]
            assert outer[2] <= point[2] and point[3] <= outer[3]

    def test_point_on_grid_line_marks_next_cell(self):
        outer = pixel_block((0.45, 0.45, 0.5, 0.5), 10, 10)
        point = pixel_block((0.5, 0.5, 0.5, 0.5), 10, 10)

        assert outer == (4, 5, 4, 5)
        assert point == (5, 6, 5, 6)


class TestBuildTextMap:
    """Tests for build_text_map."""

    def test_no_texts(self):
        text_map = build_text_map([], 16, 6, 5)

        assert text_map.shape == (16, 6, 5)
        assert not text_map.any()

    def test_full_cover_broadcasts(self):
        embedding = torch.from_numpy(HashedNgramEncoder(dim=16).encode("view it"))

        text_map = build_text_map([_text("view it", (0, 0, 1, 1))], 16, 4, 4)

        assert torch.allclose(text_map, embedding[:, None, None].expand(16, 4, 4))

    def test_disjoint_halves_average(self):
        """Inside one box the map is half that text's embedding."""
        encoder = HashedNgramEncoder(dim=16)
        texts = [_text("sale", (0, 0, 0.5, 1)), _text("menu", (0.5, 0, 1, 1))]

        text_map = build_text_map(texts, 16, 4, 8, encoder)

        left = torch.from_numpy(encoder.encode("sale")) / 2
        right = torch.from_numpy(encoder.encode("menu")) / 2
        assert torch.allclose(text_map[:, :, :4], left[:, None, None].expand(16, 4, 4), atol=1e-6)
        assert torch.allclose(text_map[:, :, 4:], right[:, None, None].expand(16, 4, 4), atol=1e-6)

    def test_permutation_invariant(self):
        texts = _random_texts(np.random.default_rng(1), 6)

        forward = build_text_map(texts, 16, 9, 11)
        backward = build_text_map(list(reversed(texts)), 16, 9, 11)

        assert torch.allclose(forward, backward, atol=1e-6)

    def test_encoder_dim_mismatch(self):
        with pytest.raises(ShapeMismatch):
            build_text_map([_text("x", (0, 0, 1, 1))], 16, 4, 4, HashedNgramEncoder(dim=8))

    def test_rescale_texts(self):
        scaled = rescale_texts([_text("x", (0.2, 0.4, 1.0, 1.0))], 0.5, 0.25)

        assert scaled[0].bbox == pytest.approx((0.1, 0.1, 0.5, 0.25))


class TestBuildBoxAttention:
    """Tests for build_box_attention."""

    def test_no_texts(self):
        attention = build_box_attention([], 3, 4)

        assert not attention[0].any() and not attention[1].any()
        assert bool((attention[2] == 1).all())

    def test_full_cover(self):
        attention = build_box_attention([_text("x", (0, 0, 1, 1))], 5, 5)

        assert bool((attention[0] == 1).all())

    def test_disjoint_halves(self):
        attention = build_box_attention([_text("a", (0, 0, 0.5, 1)), _text("b", (0.5, 0, 1, 1))], 4, 8)

        assert bool((attention[0] == 0.5).all())

    def test_cover_count_oracle(self):
        """Channel 0 is the per-pixel cover count over N for random box sets."""
        rng = np.random.default_rng(0)
        for _ in range(200):
            height, width = (int(v) for v in rng.integers(1, 40, size=2))
            texts = _random_texts(rng, int(rng.integers(1, 9)))

            attention = build_box_attention(texts, height, width)

            np.testing.assert_allclose(attention[0].numpy(), _coverage_oracle(texts, height, width), atol=1e-6)
            assert not attention[1].any()
            assert bool((attention[2] == 1).all())

    def test_permutation_invariant(self):
        texts = _random_texts(np.random.default_rng(2), 5)

        assert torch.allclose(
            build_box_attention(texts, 16, 16), build_box_attention(texts[::-1], 16, 16), atol=1e-6
        )

    def test_batch_levels(self):
        maps = batch_box_attention([[], [_text("x", (0, 0, 1, 1))]], [(8, 8), (4, 4)])

        assert [tuple(m.shape) for m in maps] == [(2, 3, 8, 8), (2, 3, 4, 4)]


class TestTextFusion:
    """Tests for the text fusion module."""

    def test_zero_init_identity(self):
        torch.manual_seed(0)
        module = TextFusion(text_dim=16, channels=8)
        stem = torch.randn(2, 8, 8, 8)
        text_map = torch.randn(2, 16, 32, 32)

        assert torch.equal(text_fusion_forward(stem, text_map, module), stem)

    def test_stem_geometry(self):
        """A 32 x 32 map lands on the 8 x 8 stem grid."""
        module = TextFusion(text_dim=4, channels=3)

        assert module.project(torch.zeros(1, 4, 32, 32)).shape == (1, 3, 8, 8)

    def test_shape_mismatch(self):
        module = TextFusion(text_dim=4, channels=3)

        with pytest.raises(ShapeMismatch):
            module(torch.zeros(1, 3, 5, 5), torch.zeros(1, 4, 32, 32))

    def test_projection_gradient(self):
        """Analytic gradients of the projection match finite differences."""
        torch.manual_seed(0)
        module = TextFusion(text_dim=4, channels=3).double()
        stem = torch.randn(1, 3, 2, 2, dtype=torch.float64)
        text_map = torch.randn(1, 4, 8, 8, dtype=torch.float64)
        weight = torch.randn(3, 4, 1, 1, dtype=torch.float64, requires_grad=True)
        bias = torch.randn(3, dtype=torch.float64, requires_grad=True)

        def fused(w, b):
            return functional_call(module, {"proj.weight": w, "proj.bias": b}, (stem, text_map))

        assert torch.autograd.gradcheck(fused, (weight, bias), eps=1e-6, atol=1e-8, rtol=1e-4)


class TestBoxAttention:
    """Tests for the box attention module."""

    def test_zero_init_identity(self):
        module = BoxAttention(channels=4, levels=2)
        features = [torch.randn(1, 4, 8, 8), torch.randn(1, 4, 4, 4)]
        attention = batch_box_attention([[_text("x", (0, 0, 0.5, 0.5))]], [(8, 8), (4, 4)])

        out = module(features, attention)

        assert all(torch.equal(o, f) for o, f in zip(out, features, strict=True))

    def test_constructed_weights(self):
        """Channel 0 passed straight through adds 1 under a full-cover box."""
        module = BoxAttention(channels=2, levels=1)
        with torch.no_grad():
            module.convs[0].weight[0, 0] = 1.0
        feature = torch.randn(1, 2, 4, 4)
        attention = batch_box_attention([[_text("x", (0, 0, 1, 1))]], [(4, 4)])

        out = module([feature], attention)[0]

        assert torch.allclose(out[0, 0], feature[0, 0] + 1)
        assert torch.equal(out[0, 1], feature[0, 1])

    def test_level_count_mismatch(self):
        with pytest.raises(ShapeMismatch):
            BoxAttention(channels=2, levels=5)([torch.zeros(1, 2, 4, 4)], [torch.zeros(1, 3, 4, 4)])

    def test_spatial_mismatch(self):
        with pytest.raises(ShapeMismatch):
            BoxAttention(channels=2, levels=1)([torch.zeros(1, 2, 4, 4)], [torch.zeros(1, 3, 5, 5)])

    def test_projection_gradient(self):
        torch.manual_seed(1)
        module = BoxAttention(channels=3, levels=1).double()
        feature = torch.randn(1, 3, 8, 8, dtype=torch.float64)
        attention = batch_box_attention([[_text("a", (0.1, 0.1, 0.6, 0.4)), _text("b", (0.3, 0.2, 0.9, 0.9))]], [(8, 8)])
        attention = [attention[0].double()]
        weight = torch.randn(3, 3, 1, 1, dtype=torch.float64, requires_grad=True)
        bias = torch.randn(3, dtype=torch.float64, requires_grad=True)

        def attended(w, b):
            return functional_call(module, {"convs.0.weight": w, "convs.0.bias": b}, ([feature], attention))[0]

        assert torch.autograd.gradcheck(attended, (weight, bias), eps=1e-6, atol=1e-8, rtol=1e-4)
