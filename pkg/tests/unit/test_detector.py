"""Tests for the group detector, its preprocessing and checkpoints."""

import numpy as np
import pytest
import torch

from groupdet.core.errors import WeightMismatch
from groupdet.core.types import TextLayerRecord
from groupdet.model.detector import (
    GroupDetector,
    ImageMeta,
    detect,
    image_to_tensor,
    load_checkpoint,
    load_weights,
    map_roi_levels,
    read_checkpoint,
    resize_scale,
    save_checkpoint,
)


def _image(seed: int = 0, height: int = 96, width: int = 160) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 256, size=(height, width, 3), dtype=np.uint8)


def _texts() -> list[TextLayerRecord]:
    return [
        TextLayerRecord(content="view it", bbox=(0.1, 0.1, 0.5, 0.2)),
        TextLayerRecord(content="price", bbox=(0.2, 0.5, 0.9, 0.8)),
    ]


def _random_texts(rng: np.random.Generator) -> list[TextLayerRecord]:
    records = []
    for index in range(int(rng.integers(0, 6))):
        x0, x1 = sorted(rng.uniform(0, 1, size=2))
        y0, y1 = sorted(rng.uniform(0, 1, size=2))
        records.append(TextLayerRecord(content=f"label {index}", bbox=(float(x0), float(y0), float(x1), float(y1))))
    return records


def _build(config, **updates) -> GroupDetector:
    torch.manual_seed(0)
    return GroupDetector(config.model_copy(update=updates))


class TestPreprocessing:
    """Tests for resizing helpers."""

    def test_short_side_scaled(self):
        assert resize_scale(100, 200, 800, 1300) == pytest.approx(8.0)
        assert resize_scale(150, 100, 800, 1300) == pytest.approx(8.0)

    def test_long_side_capped(self):
        assert resize_scale(100, 1000, 800, 1300) == pytest.approx(1.3)

    def test_meta_inverse(self):
        meta = ImageMeta(100, 200, 50, 400)
        boxes = torch.tensor([[10.0, 20.0, 60.0, 80.0]])

        assert torch.allclose(meta.to_original(meta.to_resized(boxes)), boxes)

    def test_to_original_clips(self):
        meta = ImageMeta(10, 10, 20, 20)

        assert meta.to_original(torch.tensor([[-4.0, 0.0, 40.0, 10.0]])).tolist() == [[0.0, 0.0, 10.0, 5.0]]

    def test_image_to_tensor(self):
        image = np.full((4, 6, 3), 255, dtype=np.uint8)

        tensor = image_to_tensor(image)

        assert tensor.shape == (3, 4, 6)
        assert tensor.dtype == torch.float32
        assert bool((tensor == 1.0).all())

    def test_preprocess_pads_to_64(self, tiny_config):
        model = _build(tiny_config)

        batch, metas = model.preprocess([image_to_tensor(_image(height=96, width=160))])

        assert (metas[0].new_height, metas[0].new_width) == (128, 213)
        assert batch.shape == (1, 3, 128, 256)


class TestMapRoILevels:
    def test_canonical_scale(self):
        boxes = torch.tensor([[0.0, 0.0, 224.0, 224.0], [0.0, 0.0, 448.0, 448.0], [0.0, 0.0, 112.0, 112.0]])

        assert map_roi_levels(boxes).tolist() == [2, 3, 1]

    def test_clamped(self):
        boxes = torch.tensor([[0.0, 0.0, 8.0, 8.0], [0.0, 0.0, 4000.0, 4000.0]])

        assert map_roi_levels(boxes).tolist() == [0, 3]


class TestGroupDetector:
    """Tests for GroupDetector."""

    def test_training_losses(self, tiny_config):
        model = _build(tiny_config)
        model.train()
        images = [image_to_tensor(_image(1)), image_to_tensor(_image(2, 128, 128))]
        gt = [torch.tensor([[10.0, 10.0, 60.0, 40.0]]), torch.tensor([[0.0, 0.0, 100.0, 30.0], [20.0, 50.0, 90.0, 120.0]])]

        losses = model(images, [[], []], gt)

        assert set(losses) == {"loss_objectness", "loss_rpn_box", "loss_classifier", "loss_box_reg"}
        assert all(torch.isfinite(v) for v in losses.values())
        sum(losses.values()).backward()
        assert model.rpn_head.conv.weight.grad is not None
        assert model.roi_head.fc6.weight.grad is not None

    def test_training_without_groups(self, tiny_config):
        model = _build(tiny_config)
        model.train()

        losses = model([image_to_tensor(_image(3))], [[]], [torch.zeros((0, 4))])

        assert losses["loss_rpn_box"].item() == 0.0
        assert losses["loss_box_reg"].item() == 0.0
        assert torch.isfinite(losses["loss_objectness"])

    def test_training_requires_ground_truth(self, tiny_config):
        model = _build(tiny_config)
        model.train()

        with pytest.raises(ValueError):
            model([image_to_tensor(_image())], [[]])

    def test_predict_in_bounds(self, tiny_config):
        model = _build(tiny_config)

        detections = model.predict(_image(4, 90, 150))

        assert len(detections) <= tiny_config.max_dets
        for d in detections:
            x, y, w, h = d.bbox
            assert 0.0 <= x and 0.0 <= y and w >= 0.0 and h >= 0.0
            assert x + w <= 150 + 1e-3 and y + h <= 90 + 1e-3
        scores = [d.score for d in detections]
        assert scores == sorted(scores, reverse=True)

    def test_predict_deterministic(self, tiny_config):
        model = _build(tiny_config)
        image = _image(5)

        assert model.predict(image) == model.predict(image)

    def test_predict_restores_mode(self, tiny_config):
        model = _build(tiny_config)
        model.train()

        model.predict(_image())

        assert model.training

    @pytest.mark.parametrize("fusion", ["text_fusion", "box_attention", "both"])
    def test_fresh_fusion_is_inert(self, tiny_config, fusion):
        """Zero-initialized fusion modules leave predictions unchanged on ten random screens."""
        baseline = _build(tiny_config).eval()
        fused = _build(tiny_config, fusion=fusion).eval()
        rng = np.random.default_rng(6)
        sizes = rng.integers(64, 192, size=(10, 2))
        images = [image_to_tensor(_image(20 + i, int(h), int(w))) for i, (h, w) in enumerate(sizes)]
        texts = [_random_texts(rng) for _ in images]

        with torch.no_grad():
            expected = baseline(images, texts)
            actual = fused(images, texts)

        assert [len(d) for d in actual] == [len(d) for d in expected]
        for got, want in zip(actual, expected, strict=True):
            for a, b in zip(got, want, strict=True):
                assert a.bbox == pytest.approx(b.bbox, abs=1e-6)
                assert a.score == pytest.approx(b.score, abs=1e-6)

    def test_fusion_modules_present(self, tiny_config):
        assert _build(tiny_config).text_fusion is None
        model = _build(tiny_config, fusion="both")

        assert model.text_fusion is not None and model.box_attention is not None
        assert model.encoder is not None


class TestCheckpoints:
    """Tests for saving and loading weights."""

    def test_round_trip(self, tiny_config, tmp_path):
        model = _build(tiny_config)
        path = save_checkpoint(model, tmp_path / "ckpt" / "model.pt", extra={"epoch": 3})

        loaded = load_checkpoint(path)

        assert read_checkpoint(path)["epoch"] == 3
        assert loaded.config == model.config
        image = _image(8)
        assert loaded.predict(image) == model.predict(image)

    def test_detect_with_path(self, tiny_config, tmp_path):
        model = _build(tiny_config)
        path = save_checkpoint(model, tmp_path / "model.pt")
        image = _image(9)

        assert detect(image, [], tiny_config, path) == model.predict(image)

    def test_detect_with_state_dict(self, tiny_config):
        model = _build(tiny_config)
        image = _image(10)

        assert detect(image, [], tiny_config, model.state_dict()) == model.predict(image)

    def test_incompatible_config(self, tiny_config, tmp_path):
        path = save_checkpoint(_build(tiny_config), tmp_path / "model.pt")

        with pytest.raises(WeightMismatch):
            load_checkpoint(path, tiny_config.model_copy(update={"fpn_channels": 16}))

    def test_baseline_weights_do_not_fit_fusion_model(self, tiny_config):
        with pytest.raises(WeightMismatch):
            load_weights(_build(tiny_config, fusion="both"), _build(tiny_config).state_dict())

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "garbage.pt"
        path.write_bytes(b"definitely not a checkpoint")

        with pytest.raises(WeightMismatch):
            read_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(WeightMismatch):
            read_checkpoint(tmp_path / "nope.pt")

    def test_wrong_format_version(self, tiny_config, tmp_path):
        path = tmp_path / "old.pt"
        torch.save({"format_version": 99, "state_dict": _build(tiny_config).state_dict()}, path)

        with pytest.raises(WeightMismatch):
            read_checkpoint(path)
