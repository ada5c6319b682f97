"""Tests for core types."""

import pytest
from pydantic import ValidationError

from groupdet.core.errors import InvalidSpec
from groupdet.core.types import (
    AnnotationRecord,
    DatasetManifest,
    EvalReport,
    ImageRecord,
    Layer,
    LayerKind,
    Rect,
    SynthSpec,
    TextLayerRecord,
    TextRecord,
)


class TestRect:
    """Tests for Rect geometry."""

    def test_union_and_extent(self):
        """Union spans both rectangles."""
        a = Rect(x=0, y=0, w=10, h=10)
        b = Rect(x=5, y=20, w=10, h=5)

        u = a.union(b)

        assert u.to_xyxy() == (0, 0, 15, 25)
        assert u.area == 375

    def test_intersects_requires_positive_overlap(self):
        """Touching edges do not intersect."""
        a = Rect(x=0, y=0, w=10, h=10)

        assert a.intersects(Rect(x=5, y=5, w=10, h=10))
        assert not a.intersects(Rect(x=10, y=0, w=5, h=5))

    def test_clip_outside_collapses(self):
        """A rect fully outside the canvas clips to zero area."""
        r = Rect(x=-50, y=10, w=20, h=20)

        assert r.clip(100, 100).area == 0

    def test_clip_partial(self):
        """Partial overlap keeps the inside part."""
        r = Rect(x=300, y=20, w=120, h=60)

        assert r.clip(400, 200).to_xywh() == [300, 20, 100, 60]

    def test_negative_size_rejected(self):
        """Width and height must be non-negative."""
        with pytest.raises(ValidationError):
            Rect(x=0, y=0, w=-1, h=5)


class TestLayer:
    """Tests for Layer invariants."""

    def test_text_requires_content(self):
        """Text layers carry content."""
        with pytest.raises(ValidationError):
            Layer(id="t", kind=LayerKind.TEXT, frame=Rect(x=0, y=0, w=1, h=1))

    def test_shape_rejects_content(self):
        """Non-text layers carry no content."""
        with pytest.raises(ValidationError):
            Layer(id="s", kind=LayerKind.SHAPE, frame=Rect(x=0, y=0, w=1, h=1), text_content="x")

    def test_only_groups_have_children(self):
        """Children are reserved for group containers."""
        child = Layer(id="c", kind=LayerKind.SHAPE, frame=Rect(x=0, y=0, w=1, h=1))
        with pytest.raises(ValidationError):
            Layer(id="s", kind=LayerKind.SHAPE, frame=Rect(x=0, y=0, w=1, h=1), children=[child])

    def test_walk_is_depth_first(self):
        """walk() yields the layer, then descendants in order."""
        leaf = Layer(id="leaf", kind=LayerKind.SHAPE, frame=Rect(x=0, y=0, w=1, h=1))
        inner = Layer(id="inner", kind=LayerKind.GROUP, frame=Rect(x=0, y=0, w=1, h=1), children=[leaf])
        root = Layer(id="root", kind=LayerKind.GROUP, name="x #group#", frame=Rect(x=0, y=0, w=1, h=1), children=[inner])

        assert [layer.id for layer in root.walk()] == ["root", "inner", "leaf"]
        assert root.is_group_marked
        assert not inner.is_group_marked


class TestTextLayerRecord:
    """Tests for normalized text records."""

    def test_valid_bbox(self):
        record = TextLayerRecord(content="price", bbox=(0.1, 0.2, 0.3, 0.4))

        assert record.to_pixels(100, 200) == pytest.approx((10, 40, 30, 80))

    @pytest.mark.parametrize("bbox", [(0.5, 0.0, 0.4, 1.0), (0.0, 0.0, 1.2, 1.0), (-0.1, 0.0, 0.5, 0.5)])
    def test_invalid_bbox(self, bbox):
        """Boxes must be ordered and inside [0,1]."""
        with pytest.raises(ValidationError):
            TextLayerRecord(content="x", bbox=bbox)


class TestDatasetManifest:
    """Tests for manifest validation."""

    def _image(self, image_id: int = 1) -> ImageRecord:
        return ImageRecord(id=image_id, file_name=f"{image_id}.png", width=10, height=10)

    def test_default_category(self):
        """A fresh manifest has the single group category."""
        manifest = DatasetManifest()

        assert [(c.id, c.name) for c in manifest.categories] == [(1, "group")]

    def test_area_must_match(self):
        with pytest.raises(ValidationError):
            DatasetManifest(
                images=[self._image()],
                annotations=[AnnotationRecord(id=1, image_id=1, category_id=1, bbox=[0, 0, 2, 3], area=5)],
            )

    def test_unknown_image_reference(self):
        with pytest.raises(ValidationError):
            DatasetManifest(
                images=[self._image()],
                annotations=[AnnotationRecord(id=1, image_id=2, category_id=1, bbox=[0, 0, 2, 3], area=6)],
            )

    def test_duplicate_image_ids(self):
        with pytest.raises(ValidationError):
            DatasetManifest(images=[self._image(), self._image()])

    def test_text_records_for(self):
        """Sidecar texts come back as TextLayerRecords."""
        manifest = DatasetManifest(
            images=[self._image()],
            texts={1: [TextRecord(content="go", bbox=[0.1, 0.1, 0.2, 0.2])]},
        )

        records = manifest.text_records_for(1)

        assert records == [TextLayerRecord(content="go", bbox=(0.1, 0.1, 0.2, 0.2))]
        assert manifest.text_records_for(99) == []


class TestEvalReport:
    """Tests for the report JSON schema."""

    def test_coco_json_keys(self):
        report = EvalReport(ap=0.3, ap50=1.0, ap75=0.0, ap_s=-1.0, ap_m=0.3, ap_l=-1.0)

        payload = report.to_coco_json()

        assert list(payload) == ["AP", "AP50", "AP75", "APs", "APm", "APl"]
        assert EvalReport.from_coco_json(payload) == report


class TestSynthSpec:
    """Tests for synthetic spec validation."""

    def test_defaults_are_valid(self):
        spec = SynthSpec()

        spec.validate_spec()

        assert spec.token_correlation == 0.9

    @pytest.mark.parametrize(
        "overrides",
        [{"n_screens": 0}, {"size_range": (128, 512)}, {"size_range": (512, 300)}, {"patterns": []}],
    )
    def test_invalid_spec(self, overrides):
        with pytest.raises(InvalidSpec):
            SynthSpec(**overrides).validate_spec()

    def test_unknown_field_rejected(self):
        with pytest.raises(ValidationError):
            SynthSpec(colour="red")
