"""
COCO Store - Write and read COCO-style datasets with a text sidecar.

Directory layout:
    <dir>/annotations.json   images / annotations / categories
    <dir>/texts.json         {"<image_id>": [{"content": str, "bbox": [x_min, y_min, x_max, y_max]}]}
    <dir>/images/<name>.png  slice bitmaps, named <parent_id>_<offset>.png
"""

import json
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np
from PIL import Image
from pydantic import ValidationError

from groupdet.core.config import get_logger
from groupdet.core.errors import DataError, SchemaError
from groupdet.core.types import (
    AnnotationRecord,
    DatasetManifest,
    GroupLabel,
    ImageRecord,
    ScreenSample,
    SliceSample,
    TextLayerRecord,
    TextRecord,
)

logger = get_logger("data.coco")

ANNOTATIONS_FILE = "annotations.json"
TEXTS_FILE = "texts.json"
IMAGES_DIR = "images"


class _ManifestBuilder:
    """Accumulates images with consecutive ids."""

    def __init__(self) -> None:
        self.manifest = DatasetManifest()
        self.images: dict[str, np.ndarray] = {}

    def add(
        self,
        name: str,
        image: np.ndarray,
        groups: Sequence[GroupLabel],
        texts: Sequence[TextLayerRecord],
    ) -> None:
        file_name = f"{name}.png"
        if file_name in self.images:
            raise DataError(f"two images would be written as {file_name}")
        image_id = len(self.manifest.images) + 1
        height, width = image.shape[:2]
        self.manifest.images.append(
            ImageRecord(id=image_id, file_name=file_name, width=width, height=height)
        )
        for group in groups:
            box = group.bbox
            self.manifest.annotations.append(
                AnnotationRecord(
                    id=len(self.manifest.annotations) + 1,
                    image_id=image_id,
                    category_id=group.category_id,
                    bbox=box.to_xywh(),
                    area=box.w * box.h,
                )
            )
        self.manifest.texts[image_id] = [
            TextRecord(content=t.content, bbox=list(t.bbox)) for t in texts
        ]
        self.images[file_name] = image


def build_manifest(slices: Sequence[SliceSample]) -> tuple[DatasetManifest, dict[str, np.ndarray]]:
    """Manifest plus bitmaps (keyed by file name) for a list of slices."""
    builder = _ManifestBuilder()
    for s in slices:
        builder.add(s.image_name, s.image, s.groups, s.texts)
    return builder.manifest, builder.images


def screens_as_manifest(
    screens: Sequence[ScreenSample],
) -> tuple[DatasetManifest, dict[str, np.ndarray]]:
    """Manifest of whole, unsliced screens."""
    builder = _ManifestBuilder()
    for s in screens:
        builder.add(s.sample_id, s.image, s.groups, s.texts)
    return builder.manifest, builder.images


# ============================================
# IO
# ============================================

def write_coco(
    manifest: DatasetManifest,
    directory: Path,
    images: Mapping[str, np.ndarray] | None = None,
) -> Path:
    """Write annotations.json, texts.json and (optionally) the PNG bitmaps."""
    try:
        directory.mkdir(parents=True, exist_ok=True)
        payload = manifest.model_dump(mode="json", exclude={"texts"})
        (directory / ANNOTATIONS_FILE).write_text(json.dumps(payload, indent=2), encoding="utf-8")

        texts = {
            str(image_id): [t.model_dump(mode="json") for t in records]
            for image_id, records in manifest.texts.items()
        }
        (directory / TEXTS_FILE).write_text(json.dumps(texts, indent=2), encoding="utf-8")

        if images:
            image_dir = directory / IMAGES_DIR
            image_dir.mkdir(exist_ok=True)
            for file_name, pixels in images.items():
                Image.fromarray(pixels).save(image_dir / file_name)
    except OSError as e:
        raise DataError(f"cannot write dataset to {directory}: {e}") from e

    logger.info(
        f"Wrote {len(manifest.images)} images, {len(manifest.annotations)} annotations "
        f"to {directory}"
    )
    return directory


def read_coco(directory: Path) -> DatasetManifest:
    """Read a dataset written by write_coco."""
    try:
        payload = json.loads((directory / ANNOTATIONS_FILE).read_text(encoding="utf-8"))
        texts_path = directory / TEXTS_FILE
        texts = json.loads(texts_path.read_text(encoding="utf-8")) if texts_path.exists() else {}
    except OSError as e:
        raise DataError(f"cannot read dataset from {directory}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"dataset in {directory} is not valid JSON: {e}") from e

    if not isinstance(payload, dict):
        raise SchemaError(f"{directory / ANNOTATIONS_FILE} must hold a JSON object")
    payload["texts"] = texts

    try:
        manifest = DatasetManifest.model_validate(payload)
    except ValidationError as e:
        raise SchemaError(f"dataset in {directory} does not match schema: {e}") from e
    return manifest


def image_path(directory: Path, record: ImageRecord) -> Path:
    return directory / IMAGES_DIR / record.file_name


def manifest_summary(manifest: DatasetManifest) -> dict[str, int]:
    return {
        "images": len(manifest.images),
        "groups": len(manifest.annotations),
        "texts": sum(len(t) for t in manifest.texts.values()),
    }

