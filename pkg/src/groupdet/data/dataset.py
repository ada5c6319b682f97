"""
Detection Dataset - torch Dataset over a COCO directory written by write_coco.
"""

from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import Tensor
from torch.utils.data import Dataset

from groupdet.core.config import get_logger
from groupdet.core.types import DatasetManifest, TextLayerRecord
from groupdet.data.coco import image_path, read_coco
from groupdet.ingest.draft import load_image

logger = get_logger("data.dataset")


@dataclass
class DetectionSample:
    """One image with xyxy group boxes (pixels) and its normalized texts."""

    image_id: int
    image: Tensor
    """3 x H x W float in [0,1]."""

    boxes: Tensor
    texts: list[TextLayerRecord] = field(default_factory=list)


class GroupDataset(Dataset[DetectionSample]):
    """Images, group boxes and text records of one split."""

    def __init__(self, directory: Path, manifest: DatasetManifest | None = None):
        self.directory = directory
        self.manifest = manifest or read_coco(directory)
        self.records = list(self.manifest.images)
        logger.info(f"Dataset {directory}: {len(self.records)} images, {len(self.manifest.annotations)} groups")

    def __len__(self) -> int:
        return len(self.records)

    def boxes_for(self, image_id: int) -> Tensor:
        rows = [
            [x, y, x + w, y + h]
            for x, y, w, h in (ann.bbox for ann in self.manifest.annotations_for(image_id))
            if w > 0 and h > 0
        ]
        return torch.tensor(rows, dtype=torch.float32).reshape(-1, 4)

    def __getitem__(self, index: int) -> DetectionSample:
        record = self.records[index]
        pixels = load_image(image_path(self.directory, record))
        image = torch.from_numpy(pixels).permute(2, 0, 1).float() / 255.0
        return DetectionSample(
            image_id=record.id,
            image=image,
            boxes=self.boxes_for(record.id),
            texts=self.manifest.text_records_for(record.id),
        )


def collate_samples(batch: list[DetectionSample]) -> list[DetectionSample]:
    return list(batch)


def hflip(sample: DetectionSample) -> DetectionSample:
    """Mirror image, boxes and text boxes left to right."""
    width = sample.image.shape[-1]
    boxes = sample.boxes.clone()
    boxes[:, 0] = width - sample.boxes[:, 2]
    boxes[:, 2] = width - sample.boxes[:, 0]
    texts = [
        TextLayerRecord(content=t.content, bbox=(1.0 - t.bbox[2], t.bbox[1], 1.0 - t.bbox[0], t.bbox[3]))
        for t in sample.texts
    ]
    return DetectionSample(
        image_id=sample.image_id,
        image=torch.flip(sample.image, dims=[-1]),
        boxes=boxes,
        texts=texts,
    )
