"""
Data Slicer - Square slicing of tall screens and package-closed splits.

A screen of size H x W is cut along its long side into square windows of
side min(H, W). Base windows advance by half a side, one window is flush
with the far edge, and rescue windows are added around boxes no base
window contains. Boxes whose integer extent along the long axis exceeds
the side cannot fit any window and are reported instead.
"""

import hashlib
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from groupdet.core.config import get_logger
from groupdet.core.errors import FewerPackagesThanSplits
from groupdet.core.types import (
    GroupLabel,
    Rect,
    ScreenSample,
    SliceSample,
    TextLayerRecord,
    Window,
)

logger = get_logger("data.slicer")


@dataclass
class SliceReport:
    """Boxes that could not be placed in any window."""

    skipped: list[GroupLabel] = field(default_factory=list)


# ============================================
# Windows
# ============================================

def _long_extent(box: Rect, axis: str) -> tuple[int, int]:
    """Integer hull of a box along the long axis."""
    if axis == "y":
        return math.floor(box.y), math.ceil(box.y_max)
    return math.floor(box.x), math.ceil(box.x_max)


def _inside(lo: int, hi: int, window: Window) -> bool:
    return window.offset <= lo and hi <= window.offset + window.side


def compute_windows(
    height: int,
    width: int,
    boxes: Sequence[Rect] = (),
) -> tuple[list[Window], list[int]]:
    """
    Square windows covering every box that can fit in one.

    Args:
        height: Screen height in pixels
        width: Screen width in pixels
        boxes: Boxes within the screen bounds

    Returns:
        (windows sorted by offset, indices of boxes too long for any window)
    """
    if height <= 0 or width <= 0:
        raise ValueError(f"screen size must be positive, got {height}x{width}")

    side = min(height, width)
    long_side = max(height, width)
    axis = "y" if height >= width else "x"

    offsets = {0, long_side - side}
    stride = max(side // 2, 1)
    k = 0
    while k * stride + side <= long_side:
        offsets.add(k * stride)
        k += 1
    windows = [Window(offset=o, side=side, axis=axis) for o in sorted(offsets)]

    skipped: list[int] = []
    for index, box in enumerate(boxes):
        lo, hi = _long_extent(box, axis)
        if hi - lo > side:
            skipped.append(index)
            continue
        if any(_inside(lo, hi, w) for w in windows):
            continue
        # Rescue window centered on the box, kept within [hi - side, lo] and the screen
        centered = round((lo + hi) / 2 - side / 2)
        offset = min(max(centered, hi - side), lo)
        offset = min(max(offset, 0), long_side - side)
        windows.append(Window(offset=offset, side=side, axis=axis))

    windows = sorted(set(windows), key=lambda w: w.offset)
    return windows, skipped


# ============================================
# Slicing
# ============================================

def _slice_texts(
    texts: Sequence[TextLayerRecord],
    window: Window,
    width: int,
    height: int,
) -> list[TextLayerRecord]:
    kept: list[TextLayerRecord] = []
    side = window.side
    for text in texts:
        x_min, y_min, x_max, y_max = text.to_pixels(width, height)
        if window.axis == "y":
            if not (window.offset <= y_min and y_max <= window.offset + side):
                continue
            y_min -= window.offset
            y_max -= window.offset
        else:
            if not (window.offset <= x_min and x_max <= window.offset + side):
                continue
            x_min -= window.offset
            x_max -= window.offset
        bbox = tuple(min(max(v / side, 0.0), 1.0) for v in (x_min, y_min, x_max, y_max))
        kept.append(TextLayerRecord(content=text.content, bbox=bbox))  # type: ignore[arg-type]
    return kept


def _slice_groups(groups: Sequence[GroupLabel], window: Window) -> list[GroupLabel]:
    kept: list[GroupLabel] = []
    for group in groups:
        box = group.bbox
        if window.axis == "y":
            if not (window.offset <= box.y and box.y_max <= window.offset + window.side):
                continue
            moved = box.translate(0, -window.offset)
        else:
            if not (window.offset <= box.x and box.x_max <= window.offset + window.side):
                continue
            moved = box.translate(-window.offset, 0)
        kept.append(GroupLabel(bbox=moved, category_id=group.category_id))
    return kept


def slice_sample(sample: ScreenSample) -> tuple[list[SliceSample], SliceReport]:
    """
    Cut a screen into square slices.

    Only groups and texts entirely inside a window are kept, translated to
    window coordinates. Pixels are cropped, never resized.
    """
    if sample.image.shape[:2] != (sample.height, sample.width):
        raise ValueError(
            f"sample {sample.sample_id}: image shape {sample.image.shape[:2]} "
            f"does not match {sample.height}x{sample.width}"
        )

    windows, skipped = compute_windows(
        sample.height, sample.width, [g.bbox for g in sample.groups]
    )
    report = SliceReport(skipped=[sample.groups[i] for i in skipped])
    if skipped:
        logger.warning(f"Sample {sample.sample_id}: {len(skipped)} groups longer than the slice side")

    slices: list[SliceSample] = []
    for window in windows:
        lo, hi = window.offset, window.offset + window.side
        if window.axis == "y":
            crop = sample.image[lo:hi, :, :]
        else:
            crop = sample.image[:, lo:hi, :]
        slices.append(
            SliceSample(
                parent_id=sample.sample_id,
                package_id=sample.package_id,
                window=window,
                image=np.ascontiguousarray(crop),
                groups=_slice_groups(sample.groups, window),
                texts=_slice_texts(sample.texts, window, sample.width, sample.height),
            )
        )
    return slices, report


def slice_corpus(samples: Sequence[ScreenSample]) -> tuple[list[SliceSample], SliceReport]:
    """Slice every screen; the report collects all skipped groups."""
    slices: list[SliceSample] = []
    report = SliceReport()
    for sample in samples:
        sample_slices, sample_report = slice_sample(sample)
        slices.extend(sample_slices)
        report.skipped.extend(sample_report.skipped)
    return slices, report


# ============================================
# Splits
# ============================================

def _package_hash(package_id: str) -> str:
    return hashlib.sha1(package_id.encode("utf-8")).hexdigest()


def split_corpus(
    samples: Sequence[ScreenSample],
    ratios: tuple[float, float, float],
    seed: int,
) -> tuple[list[ScreenSample], list[ScreenSample], list[ScreenSample]]:
    """
    Package-closed train/val/test split.

    Packages are ordered by a stable hash of their id, shuffled with the
    seed, and dealt out by ratio; every split gets at least one package.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-6:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")

    packages = sorted({s.package_id for s in samples}, key=_package_hash)
    n = len(packages)
    if n < 3:
        raise FewerPackagesThanSplits(f"{n} packages cannot fill 3 splits")

    order = np.random.default_rng(seed).permutation(n)
    shuffled = [packages[i] for i in order]

    n_val = max(1, round(n * ratios[1]))
    n_test = max(1, round(n * ratios[2]))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise FewerPackagesThanSplits(f"{n} packages leave no package for training")

    assignment: dict[str, int] = {}
    for index, package_id in enumerate(shuffled):
        assignment[package_id] = 0 if index < n_train else (1 if index < n_train + n_val else 2)

    splits: tuple[list[ScreenSample], list[ScreenSample], list[ScreenSample]] = ([], [], [])
    for sample in samples:
        splits[assignment[sample.package_id]].append(sample)

    logger.info(
        f"Split {n} packages into {n_train}/{n_val}/{n_test} "
        f"({len(splits[0])}/{len(splits[1])}/{len(splits[2])} screens)"
    )
    return splits


def is_package_closed(*splits: Sequence[ScreenSample | SliceSample]) -> bool:
    """True when no package appears in more than one split."""
    seen: dict[str, int] = {}
    for index, split in enumerate(splits):
        for sample in split:
            if seen.setdefault(sample.package_id, index) != index:
                return False
    return True
