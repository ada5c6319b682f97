"""
Core type definitions for GroupDet.

These types cover the whole pipeline:
- Draft layer tree: Rect, Layer, Artboard, DesignDraft
- Screens and slices: TextLayerRecord, GroupLabel, ScreenSample, Window, SliceSample
- COCO-style dataset: DatasetManifest and its records
- Results: Detection, EvalReport
- Synthetic corpus: SynthSpec
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from groupdet.core.errors import InvalidSpec

GROUP_MARKER = "#group#"
GROUP_CATEGORY_ID = 1
GROUP_CATEGORY_NAME = "group"


# ============================================
# Enums
# ============================================

class LayerKind(str, Enum):
    """Kinds of layers in a design draft."""
    TEXT = "text"
    SHAPE = "shape"
    BITMAP = "bitmap"
    GROUP = "group"          # group container


# ============================================
# Geometry
# ============================================

class Rect(BaseModel):
    """Axis-aligned rectangle in pixels (top-left origin, y down)."""

    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    w: float = Field(ge=0)
    h: float = Field(ge=0)

    @classmethod
    def from_xyxy(cls, x_min: float, y_min: float, x_max: float, y_max: float) -> "Rect":
        return cls(x=x_min, y=y_min, w=max(x_max - x_min, 0.0), h=max(y_max - y_min, 0.0))

    @property
    def x_max(self) -> float:
        return self.x + self.w

    @property
    def y_max(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_xyxy(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x_max, self.y_max)

    def to_xywh(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    def intersects(self, other: "Rect") -> bool:
        """True when the two rectangles overlap with positive area."""
        return (
            min(self.x_max, other.x_max) > max(self.x, other.x)
            and min(self.y_max, other.y_max) > max(self.y, other.y)
        )

    def contains(self, other: "Rect") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.x_max <= self.x_max
            and other.y_max <= self.y_max
        )

    def union(self, other: "Rect") -> "Rect":
        return Rect.from_xyxy(
            min(self.x, other.x),
            min(self.y, other.y),
            max(self.x_max, other.x_max),
            max(self.y_max, other.y_max),
        )

    def clip(self, width: float, height: float) -> "Rect":
        """Clip to [0,width]x[0,height]; a rect fully outside collapses to zero size."""
        x_min = min(max(self.x, 0.0), width)
        y_min = min(max(self.y, 0.0), height)
        x_max = min(max(self.x_max, 0.0), width)
        y_max = min(max(self.y_max, 0.0), height)
        return Rect.from_xyxy(x_min, y_min, x_max, y_max)

    def translate(self, dx: float, dy: float) -> "Rect":
        return Rect(x=self.x + dx, y=self.y + dy, w=self.w, h=self.h)


# ============================================
# Draft Layer Tree
# ============================================

class Layer(BaseModel):
    """A layer of an artboard with its frame in absolute artboard coordinates."""

    id: str
    kind: LayerKind
    name: str = ""
    frame: Rect
    text_content: str | None = None
    children: list["Layer"] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_kind(self) -> "Layer":
        if (self.text_content is not None) != (self.kind == LayerKind.TEXT):
            raise ValueError(f"layer {self.id}: text content is required for text layers only")
        if self.children and self.kind != LayerKind.GROUP:
            raise ValueError(f"layer {self.id}: only group containers may have children")
        return self

    @property
    def is_group_marked(self) -> bool:
        return GROUP_MARKER in self.name

    def walk(self) -> "list[Layer]":
        """This layer followed by all descendants, depth first."""
        layers = [self]
        for child in self.children:
            layers.extend(child.walk())
        return layers

    def descendants(self) -> "list[Layer]":
        return self.walk()[1:]


Layer.model_rebuild()


class Artboard(BaseModel):
    """One screen-sized canvas within a draft."""

    id: str
    name: str = ""
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    layers: list[Layer] = Field(default_factory=list)
    image_ref: str

    @property
    def rect(self) -> Rect:
        return Rect(x=0, y=0, w=self.width, h=self.height)

    def walk(self) -> list[Layer]:
        layers: list[Layer] = []
        for layer in self.layers:
            layers.extend(layer.walk())
        return layers


class DesignDraft(BaseModel):
    """A parsed design-draft document."""

    package_id: str
    artboards: list[Artboard]

    @model_validator(mode="after")
    def _unique_artboards(self) -> "DesignDraft":
        ids = [a.id for a in self.artboards]
        if len(ids) != len(set(ids)):
            raise ValueError(f"draft {self.package_id}: artboard ids are not unique")
        return self


# ============================================
# Screens and Slices
# ============================================

class TextLayerRecord(BaseModel):
    """Text content with its box normalized to [0,1] (x_min, y_min, x_max, y_max)."""

    model_config = ConfigDict(frozen=True)

    content: str
    bbox: tuple[float, float, float, float]

    @field_validator("bbox")
    @classmethod
    def _check_bbox(cls, v: tuple[float, float, float, float]) -> tuple[float, float, float, float]:
        x_min, y_min, x_max, y_max = v
        if not (0.0 <= x_min <= x_max <= 1.0 and 0.0 <= y_min <= y_max <= 1.0):
            raise ValueError(f"normalized bbox out of range: {v}")
        return v

    def to_pixels(self, width: float, height: float) -> tuple[float, float, float, float]:
        x_min, y_min, x_max, y_max = self.bbox
        return (x_min * width, y_min * height, x_max * width, y_max * height)


class GroupLabel(BaseModel):
    """Ground-truth group box in pixels."""

    model_config = ConfigDict(frozen=True)

    bbox: Rect
    category_id: int = GROUP_CATEGORY_ID


@dataclass(eq=False)
class ScreenSample:
    """One rendered UI screen with its text records and group boxes."""

    sample_id: str
    package_id: str
    width: int
    height: int
    image: NDArray[np.uint8]
    """H x W x 3 pixels."""

    texts: list[TextLayerRecord] = field(default_factory=list)
    groups: list[GroupLabel] = field(default_factory=list)


class Window(BaseModel):
    """Square window along the long axis of a screen."""

    model_config = ConfigDict(frozen=True)

    offset: int = Field(ge=0)
    side: int = Field(gt=0)
    axis: Literal["y", "x"] = "y"


@dataclass(eq=False)
class SliceSample:
    """Square crop of a screen with slice-local groups and slice-normalized texts."""

    parent_id: str
    package_id: str
    window: Window
    image: NDArray[np.uint8]
    groups: list[GroupLabel] = field(default_factory=list)
    texts: list[TextLayerRecord] = field(default_factory=list)

    @property
    def image_name(self) -> str:
        return f"{self.parent_id}_{self.window.offset}"


# ============================================
# COCO-style Dataset
# ============================================

class ImageRecord(BaseModel):
    id: int
    file_name: str
    width: int = Field(gt=0)
    height: int = Field(gt=0)


class AnnotationRecord(BaseModel):
    id: int
    image_id: int
    category_id: int
    bbox: list[float] = Field(min_length=4, max_length=4)
    area: float
    iscrowd: int = 0


class CategoryRecord(BaseModel):
    id: int
    name: str


class TextRecord(BaseModel):
    content: str
    bbox: list[float] = Field(min_length=4, max_length=4)


class DatasetManifest(BaseModel):
    """COCO-style images/annotations/categories plus the per-image text sidecar."""

    images: list[ImageRecord] = Field(default_factory=list)
    annotations: list[AnnotationRecord] = Field(default_factory=list)
    categories: list[CategoryRecord] = Field(
        default_factory=lambda: [CategoryRecord(id=GROUP_CATEGORY_ID, name=GROUP_CATEGORY_NAME)]
    )
    texts: dict[int, list[TextRecord]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_references(self) -> "DatasetManifest":
        image_ids = [img.id for img in self.images]
        if len(image_ids) != len(set(image_ids)):
            raise ValueError("image ids are not unique")
        ann_ids = [ann.id for ann in self.annotations]
        if len(ann_ids) != len(set(ann_ids)):
            raise ValueError("annotation ids are not unique")
        known = set(image_ids)
        for ann in self.annotations:
            if ann.image_id not in known:
                raise ValueError(f"annotation {ann.id} references unknown image {ann.image_id}")
            if not math.isclose(ann.area, ann.bbox[2] * ann.bbox[3], rel_tol=1e-9, abs_tol=1e-9):
                raise ValueError(f"annotation {ann.id}: area must equal w*h")
        for image_id in self.texts:
            if image_id not in known:
                raise ValueError(f"texts reference unknown image {image_id}")
        return self

    def annotations_for(self, image_id: int) -> list[AnnotationRecord]:
        return [ann for ann in self.annotations if ann.image_id == image_id]

    def text_records_for(self, image_id: int) -> list[TextLayerRecord]:
        return [
            TextLayerRecord(content=t.content, bbox=(t.bbox[0], t.bbox[1], t.bbox[2], t.bbox[3]))
            for t in self.texts.get(image_id, [])
        ]


# ============================================
# Results
# ============================================

class Detection(BaseModel):
    """A scored group box, [x, y, w, h] in original image pixels."""

    bbox: list[float] = Field(min_length=4, max_length=4)
    score: float = Field(ge=0.0, le=1.0)
    category_id: int = GROUP_CATEGORY_ID


class EvalReport(BaseModel):
    """COCO-style AP numbers; -1 marks a scale bucket without ground truth."""

    ap: float
    ap50: float
    ap75: float
    ap_s: float
    ap_m: float
    ap_l: float

    def to_coco_json(self) -> dict[str, float]:
        return {
            "AP": self.ap,
            "AP50": self.ap50,
            "AP75": self.ap75,
            "APs": self.ap_s,
            "APm": self.ap_m,
            "APl": self.ap_l,
        }

    @classmethod
    def from_coco_json(cls, data: dict[str, Any]) -> "EvalReport":
        return cls(
            ap=data["AP"],
            ap50=data["AP50"],
            ap75=data["AP75"],
            ap_s=data["APs"],
            ap_m=data["APm"],
            ap_l=data["APl"],
        )


# ============================================
# Synthetic Corpus
# ============================================

SynthPattern = Literal["icon_caption", "banner", "list_row"]


class SynthSpec(BaseModel):
    """Parameters of a synthetic UI corpus."""

    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    n_screens: int = 16
    size_range: tuple[int, int] = (256, 768)
    """(min, max) pixels per axis."""

    patterns: list[SynthPattern] = Field(
        default_factory=lambda: ["icon_caption", "banner", "list_row"]
    )
    distractor_density: float = 1.0
    """Expected standalone distractors per 100k square pixels."""

    vocab_size: int = 64
    token_correlation: float = 0.9
    """Probability that a text draws from the vocabulary half matching its grouphood."""

    screens_per_package: int = 4

    def validate_spec(self) -> None:
        """Raise InvalidSpec when the spec is out of range."""
        low, high = self.size_range
        problems = []
        if self.n_screens <= 0:
            problems.append("n_screens must be positive")
        if low < 256:
            problems.append("size_range min must be at least 256")
        if high < low:
            problems.append("size_range max must not be below min")
        if not self.patterns:
            problems.append("at least one pattern is required")
        if self.distractor_density < 0:
            problems.append("distractor_density must be non-negative")
        if self.vocab_size < 2:
            problems.append("vocab_size must be at least 2")
        if not 0.0 <= self.token_correlation <= 1.0:
            problems.append("token_correlation must lie in [0,1]")
        if self.screens_per_package <= 0:
            problems.append("screens_per_package must be positive")
        if problems:
            raise InvalidSpec("; ".join(problems))
