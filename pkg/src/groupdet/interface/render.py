"""
Overlay rendering for detections and ground-truth groups.
"""

from collections.abc import Sequence
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from groupdet.core.types import Detection, GroupLabel

DETECTION_COLOR = (230, 40, 40)
GROUND_TRUTH_COLOR = (40, 160, 60)


def render_overlay(
    image: np.ndarray,
    detections: Sequence[Detection],
    groups: Sequence[GroupLabel] = (),
    min_score: float = 0.0,
    width: int = 2,
) -> Image.Image:
    """Draw gt boxes (green) and scored detections (red) on a copy of the image."""
    canvas = Image.fromarray(image).convert("RGB")
    draw = ImageDraw.Draw(canvas)

    for group in groups:
        draw.rectangle(group.bbox.to_xyxy(), outline=GROUND_TRUTH_COLOR, width=width)

    for det in detections:
        if det.score < min_score:
            continue
        x, y, w, h = det.bbox
        draw.rectangle((x, y, x + w, y + h), outline=DETECTION_COLOR, width=width)
        label = f"{det.score:.2f}"
        # Label sits above the box unless that would leave the image
        text_y = y - 12 if y >= 12 else y + 2
        left, top, right, bottom = draw.textbbox((x + 2, text_y), label)
        draw.rectangle((left - 1, top - 1, right + 1, bottom + 1), fill=DETECTION_COLOR)
        draw.text((x + 2, text_y), label, fill=(255, 255, 255))
    return canvas


def save_overlay(
    image: np.ndarray,
    detections: Sequence[Detection],
    path: Path,
    groups: Sequence[GroupLabel] = (),
    min_score: float = 0.0,
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    render_overlay(image, detections, groups, min_score).save(path)
    return path
