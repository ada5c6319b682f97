"""
Pytest configuration and fixtures for GroupDet tests.
"""

import json
import os
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

# Set test environment before importing app modules
os.environ.pop("GROUPDET_OUT", None)

from groupdet.core.config import DetectorConfig  # noqa: E402
from groupdet.core.types import SynthSpec  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def write_draft_with_images(payload: dict, directory: Path, name: str) -> Path:
    """Write a draft JSON and a PNG of the right size for each artboard."""
    directory.mkdir(parents=True, exist_ok=True)
    for index, board in enumerate(payload["artboards"]):
        path = directory / board["image_ref"]
        path.parent.mkdir(parents=True, exist_ok=True)
        pixels = np.full((board["height"], board["width"], 3), 200 + index * 10, dtype=np.uint8)
        Image.fromarray(pixels).save(path)
    draft_path = directory / f"{name}.json"
    draft_path.write_text(json.dumps(payload), encoding="utf-8")
    return draft_path


@pytest.fixture
def draft_payload() -> dict:
    """The minimal fixture draft as a JSON object."""
    return json.loads((FIXTURES / "draft_min.json").read_text(encoding="utf-8"))


@pytest.fixture
def draft_bytes() -> bytes:
    return (FIXTURES / "draft_min.json").read_bytes()


@pytest.fixture
def draft_dir(tmp_path: Path, draft_payload: dict) -> Path:
    """Directory holding the fixture draft and its bitmaps."""
    directory = tmp_path / "drafts"
    write_draft_with_images(draft_payload, directory, "draft_min")
    return directory


@pytest.fixture
def corpus_dir(tmp_path: Path, draft_payload: dict) -> Path:
    """Three packages, each a copy of the fixture draft with its own bitmaps."""
    directory = tmp_path / "corpus"
    for name in ("pkg-a", "pkg-b", "pkg-c"):
        payload = json.loads(json.dumps(draft_payload))
        payload["package_id"] = name
        for board in payload["artboards"]:
            board["image_ref"] = f"images/{name}/{board['id']}.png"
        write_draft_with_images(payload, directory, name)
    return directory


@pytest.fixture
def tiny_config() -> DetectorConfig:
    """A very small detector that runs in well under a second per image."""
    return DetectorConfig(
        backbone_preset="tiny",
        fpn_channels=32,
        representation_size=64,
        resize=(128, 256),
        rpn_batch_size=64,
        rpn_pre_nms_train=200,
        rpn_post_nms_train=100,
        rpn_pre_nms_test=100,
        rpn_post_nms_test=50,
        roi_batch_size=64,
        epochs=1,
        seed=0,
    )


@pytest.fixture
def small_spec() -> SynthSpec:
    return SynthSpec(seed=3, n_screens=4, size_range=(256, 320), screens_per_package=1)
