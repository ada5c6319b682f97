"""
Draft Ingest - Parse design-draft JSON into artboards, text records and group labels.

Input schema (UTF-8 JSON, frames parent-relative):

{"package_id": str,
 "artboards": [{"id": str, "name": str, "width": int, "height": int,
                "image_ref": str, "layers": [LAYER, ...]}]}

LAYER = {"id": str, "kind": "text" | "shape" | "bitmap" | "group", "name": str,
         "frame": [x, y, w, h], "content": str?, "children": [LAYER, ...]?}

Parsed layers carry absolute artboard coordinates. Groups are marked by
"#group#" in a container's name; the label box is the union of the
container's descendant frames, clipped to the artboard.
"""

import json
import re
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    StrictFloat,
    StrictInt,
    StrictStr,
    ValidationError,
)

from groupdet.core.config import get_logger
from groupdet.core.errors import (
    EmptyDraft,
    ImageMismatch,
    MissingImage,
    SchemaError,
    UnreadableImage,
)
from groupdet.core.types import (
    Artboard,
    DesignDraft,
    GroupLabel,
    Layer,
    LayerKind,
    Rect,
    ScreenSample,
    TextLayerRecord,
)

logger = get_logger("ingest.draft")


# ============================================
# Wire Schema
# ============================================

# Strict scalars: "300" is not a width. Ints stay valid where floats are expected.
Coord = StrictInt | StrictFloat


class _RawLayer(BaseModel):
    model_config = ConfigDict(extra="ignore")

    id: StrictStr | None = None
    kind: LayerKind
    name: StrictStr = ""
    frame: tuple[Coord, Coord, Coord, Coord]
    content: StrictStr | None = None
    children: list["_RawLayer"] = Field(default_factory=list)


_RawLayer.model_rebuild()


class _RawArtboard(BaseModel):
    model_config = ConfigDict(extra="ignore")

    id: StrictStr
    name: StrictStr = ""
    width: StrictInt
    height: StrictInt
    image_ref: StrictStr
    layers: list[_RawLayer] = Field(default_factory=list)


class _RawDraft(BaseModel):
    model_config = ConfigDict(extra="ignore")

    package_id: StrictStr
    artboards: list[_RawArtboard]


# ============================================
# Parsing
# ============================================

def _to_layer(raw: _RawLayer, origin_x: float, origin_y: float, fallback_id: str) -> Layer:
    """Convert a parent-relative raw layer into an absolute Layer."""
    x, y, w, h = raw.frame
    frame = Rect(x=origin_x + x, y=origin_y + y, w=w, h=h)
    layer_id = raw.id or fallback_id
    children = [
        _to_layer(child, frame.x, frame.y, f"{layer_id}.{index}")
        for index, child in enumerate(raw.children)
    ]
    return Layer(
        id=layer_id,
        kind=raw.kind,
        name=raw.name,
        frame=frame,
        text_content=raw.content,
        children=children,
    )


def parse_draft(document: bytes | str) -> DesignDraft:
    """
    Parse a draft JSON document.

    Args:
        document: Raw JSON bytes (or text) following the draft schema

    Returns:
        DesignDraft with absolute layer frames

    Raises:
        SchemaError: malformed JSON, missing fields, wrong types, or kind/content mismatches
        EmptyDraft: the draft has no artboards
    """
    try:
        payload = json.loads(document)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise SchemaError(f"draft is not valid JSON: {e}") from e

    try:
        raw = _RawDraft.model_validate(payload)
    except ValidationError as e:
        raise SchemaError(f"draft does not match schema: {e}") from e

    if not raw.artboards:
        raise EmptyDraft(f"draft {raw.package_id} has no artboards")

    try:
        artboards = [
            Artboard(
                id=board.id,
                name=board.name,
                width=board.width,
                height=board.height,
                image_ref=board.image_ref,
                layers=[
                    _to_layer(layer, 0.0, 0.0, f"{board.id}/{index}")
                    for index, layer in enumerate(board.layers)
                ],
            )
            for board in raw.artboards
        ]
        draft = DesignDraft(package_id=raw.package_id, artboards=artboards)
    except ValidationError as e:
        raise SchemaError(f"draft {raw.package_id} violates layer invariants: {e}") from e

    logger.debug(
        f"Parsed draft {draft.package_id}: {len(draft.artboards)} artboards, "
        f"{sum(len(a.walk()) for a in draft.artboards)} layers"
    )
    return draft


def _layer_to_raw(layer: Layer, origin_x: float, origin_y: float) -> dict[str, Any]:
    raw: dict[str, Any] = {
        "id": layer.id,
        "kind": layer.kind.value,
        "name": layer.name,
        "frame": [layer.frame.x - origin_x, layer.frame.y - origin_y, layer.frame.w, layer.frame.h],
    }
    if layer.text_content is not None:
        raw["content"] = layer.text_content
    if layer.children:
        raw["children"] = [_layer_to_raw(c, layer.frame.x, layer.frame.y) for c in layer.children]
    return raw


def serialize_draft(draft: DesignDraft) -> bytes:
    """
    Serialize a draft back to the wire schema (parent-relative frames).

    Relative frames are recomputed as child minus parent, so the round trip
    through parse_draft is exact for integer-pixel frames; fractional frames
    may differ in the last bit.
    """
    payload = {
        "package_id": draft.package_id,
        "artboards": [
            {
                "id": board.id,
                "name": board.name,
                "width": board.width,
                "height": board.height,
                "image_ref": board.image_ref,
                "layers": [_layer_to_raw(layer, 0.0, 0.0) for layer in board.layers],
            }
            for board in draft.artboards
        ],
    }
    return json.dumps(payload, indent=2, ensure_ascii=False).encode("utf-8")


def load_drafts(directory: Path) -> list[DesignDraft]:
    """Parse every *.json draft in a directory, sorted by file name."""
    drafts = [parse_draft(path.read_bytes()) for path in sorted(directory.glob("*.json"))]
    package_ids = [d.package_id for d in drafts]
    if len(package_ids) != len(set(package_ids)):
        raise SchemaError(f"package ids are not unique in {directory}")
    logger.info(f"Loaded {len(drafts)} drafts from {directory}")
    return drafts


# ============================================
# Group Labels
# ============================================

def collect_group_labels(artboard: Artboard) -> list[GroupLabel]:
    """
    One label per layer whose name contains "#group#".

    The box is the union of the container's non-container descendant
    frames, clipped to the artboard. Containers with no descendants, or
    whose union falls outside the artboard, are skipped with a warning.
    """
    labels: list[GroupLabel] = []
    for layer in artboard.walk():
        if not layer.is_group_marked:
            continue

        frames = [d.frame for d in layer.descendants() if d.kind != LayerKind.GROUP]
        if not frames:
            logger.warning(f"Group container {layer.id} ({layer.name!r}) has no descendants, skipped")
            continue

        union = frames[0]
        for frame in frames[1:]:
            union = union.union(frame)
        clipped = union.clip(artboard.width, artboard.height)
        if clipped.area <= 0:
            logger.warning(f"Group container {layer.id} lies outside artboard {artboard.id}, skipped")
            continue

        labels.append(GroupLabel(bbox=clipped))
    return labels


# ============================================
# Screen Samples
# ============================================

def slugify(name: str) -> str:
    """Convert a name to a filesystem-safe slug."""
    slug = re.sub(r"[^a-zA-Z0-9]+", "-", name)
    slug = slug.strip("-")
    return slug or "untitled"


def _clamp01(v: float) -> float:
    return min(max(v, 0.0), 1.0)


def text_records(artboard: Artboard) -> list[TextLayerRecord]:
    """Text layers intersecting the artboard, normalized and clamped to [0,1]."""
    records: list[TextLayerRecord] = []
    board = artboard.rect
    for layer in artboard.walk():
        if layer.kind != LayerKind.TEXT or not layer.frame.intersects(board):
            continue
        x_min, y_min, x_max, y_max = layer.frame.to_xyxy()
        records.append(
            TextLayerRecord(
                content=layer.text_content or "",
                bbox=(
                    _clamp01(x_min / artboard.width),
                    _clamp01(y_min / artboard.height),
                    _clamp01(x_max / artboard.width),
                    _clamp01(y_max / artboard.height),
                ),
            )
        )
    return records


def load_image(path: Path) -> np.ndarray:
    """
    Load an image as an H x W x 3 uint8 array.

    Raises:
        MissingImage: no file at path
        UnreadableImage: the file is not a decodable image
    """
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
    except FileNotFoundError as e:
        raise MissingImage(f"image {path} not found") from e
    except (UnidentifiedImageError, OSError) as e:
        raise UnreadableImage(f"cannot read image {path}: {e}") from e


def extract_screen_samples(
    draft: DesignDraft,
    image_root: Path,
    strict: bool = False,
) -> list[ScreenSample]:
    """
    One ScreenSample per artboard whose bitmap is available.

    Args:
        draft: Parsed draft
        image_root: Base directory for relative image_ref paths
        strict: Raise MissingImage instead of skipping artboards without bitmaps

    Raises:
        ImageMismatch: a bitmap's size differs from its artboard
        MissingImage: only when strict
        UnreadableImage: a bitmap exists but cannot be decoded
    """
    samples: list[ScreenSample] = []
    taken: set[str] = set()
    for artboard in draft.artboards:
        path = Path(artboard.image_ref)
        if not path.is_absolute():
            path = image_root / path

        if not path.is_file():
            if strict:
                raise MissingImage(f"artboard {artboard.id}: image {path} not found")
            logger.warning(f"Artboard {artboard.id}: image {path} not found, skipped")
            continue

        image = load_image(path)
        if image.shape[:2] != (artboard.height, artboard.width):
            raise ImageMismatch(
                f"artboard {artboard.id}: image is {image.shape[1]}x{image.shape[0]}, "
                f"expected {artboard.width}x{artboard.height}"
            )

        sample_id = slugify(f"{draft.package_id}-{artboard.id}")
        if sample_id in taken:
            base, n = sample_id, 2
            while f"{base}-{n}" in taken:
                n += 1
            sample_id = f"{base}-{n}"
            logger.warning(f"Artboard {artboard.id}: id collides after slugging, using {sample_id}")
        taken.add(sample_id)

        samples.append(
            ScreenSample(
                sample_id=sample_id,
                package_id=draft.package_id,
                width=artboard.width,
                height=artboard.height,
                image=image,
                texts=text_records(artboard),
                groups=collect_group_labels(artboard),
            )
        )
    return samples
