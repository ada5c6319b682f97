"""
Synthetic Corpus - Deterministic UI screens with known group ground truth.

Each screen holds 1-8 group instances drawn from three patterns:
- icon_caption: glyph block plus an adjacent text token, tight box
- banner: large tile with thumbnail and 2-3 text lines, box includes the padded tile
- list_row: stacked icon+text rows, one tight group per row

Standalone shapes and texts are scattered as distractors. Text is drawn as
filled glyph blocks. Text tokens come from a seeded vocabulary split into a
"group" half and a "standalone" half; a text draws from the half matching
its grouphood with probability `token_correlation`.

Every draw is recorded in a placement log, which can be replayed to
recount groups or dumped as draft JSON for ingest round trips.
"""

import json
import string
from collections import defaultdict
from collections.abc import Sequence
from pathlib import Path
from typing import Literal

import numpy as np
from PIL import Image
from pydantic import BaseModel, Field

from groupdet.core.config import get_logger
from groupdet.core.types import (
    GroupLabel,
    LayerKind,
    Rect,
    ScreenSample,
    SynthSpec,
    TextLayerRecord,
)

logger = get_logger("data.synth")

GLYPH_W = 6
GLYPH_H = 10
GLYPH_GAP = 2
EDGE_MARGIN = 4
PLACEMENT_MARGIN = 8
BANNER_PADDING = 8
MAX_GROUPS_PER_SCREEN = 8
PLACEMENT_ATTEMPTS = 60

PlacementKind = Literal["icon_caption", "banner", "list_row", "distractor_shape", "distractor_text"]


class PlacedElement(BaseModel):
    """One drawn element: its layer kind, rect and text content."""

    kind: LayerKind
    rect: Rect
    content: str | None = None


class Placement(BaseModel):
    """A group instance or a distractor as drawn on one screen."""

    screen_id: str
    pattern: PlacementKind
    bbox: Rect
    elements: list[PlacedElement] = Field(default_factory=list)
    grouped: bool = True


# ============================================
# Vocabulary
# ============================================

def build_vocabulary(vocab_size: int, seed: int) -> tuple[list[str], list[str]]:
    """Unique lowercase tokens split into (group tokens, standalone tokens)."""
    rng = np.random.default_rng([seed, 7919])
    letters = list(string.ascii_lowercase)
    tokens: list[str] = []
    seen: set[str] = set()
    while len(tokens) < vocab_size:
        length = int(rng.integers(3, 10))
        token = "".join(rng.choice(letters, size=length))
        if token not in seen:
            seen.add(token)
            tokens.append(token)
    half = max(vocab_size // 2, 1)
    return tokens[:half], tokens[half:] or tokens[:half]


def text_size(token: str) -> tuple[int, int]:
    return max(len(token) * (GLYPH_W + GLYPH_GAP) - GLYPH_GAP, GLYPH_W), GLYPH_H


# ============================================
# Screen Builder
# ============================================

class _ScreenBuilder:
    """Draws one screen and records its placements."""

    def __init__(
        self,
        spec: SynthSpec,
        index: int,
        vocabulary: tuple[list[str], list[str]],
    ):
        self.spec = spec
        self.rng = np.random.default_rng([spec.seed, index + 1])
        low, high = spec.size_range
        self.width = int(self.rng.integers(low, high + 1))
        self.height = int(self.rng.integers(low, high + 1))
        self.screen_id = f"synth-{spec.seed}-{index:05d}"
        self.package_id = f"synth-{spec.seed}-pkg{index // spec.screens_per_package:04d}"
        self.group_tokens, self.standalone_tokens = vocabulary

        background = self.rng.integers(225, 256, size=3).astype(np.uint8)
        self.image = np.empty((self.height, self.width, 3), dtype=np.uint8)
        self.image[:, :] = background

        self.occupied: list[Rect] = []
        self.texts: list[TextLayerRecord] = []
        self.groups: list[GroupLabel] = []
        self.placements: list[Placement] = []

    # ------------------------------------------
    # Drawing primitives
    # ------------------------------------------

    def _color(self, low: int, high: int) -> np.ndarray:
        return self.rng.integers(low, high, size=3).astype(np.uint8)

    def _fill(self, rect: Rect, color: np.ndarray) -> None:
        x0, y0 = int(rect.x), int(rect.y)
        self.image[y0:y0 + int(rect.h), x0:x0 + int(rect.w)] = color

    def _token(self, grouped: bool) -> str:
        own, other = (
            (self.group_tokens, self.standalone_tokens)
            if grouped
            else (self.standalone_tokens, self.group_tokens)
        )
        pool = own if self.rng.random() < self.spec.token_correlation else other
        return str(pool[int(self.rng.integers(0, len(pool)))])

    def _draw_text(self, x: int, y: int, token: str) -> PlacedElement:
        color = self._color(10, 90)
        for i, ch in enumerate(token):
            # Glyph heights vary with the character so tokens have texture
            inset = ord(ch) % 3
            gx = x + i * (GLYPH_W + GLYPH_GAP)
            self._fill(Rect(x=gx, y=y + inset, w=GLYPH_W, h=GLYPH_H - inset), color)
        w, h = text_size(token)
        rect = Rect(x=x, y=y, w=w, h=h)
        self.texts.append(
            TextLayerRecord(
                content=token,
                bbox=(
                    rect.x / self.width,
                    rect.y / self.height,
                    rect.x_max / self.width,
                    rect.y_max / self.height,
                ),
            )
        )
        return PlacedElement(kind=LayerKind.TEXT, rect=rect, content=token)

    def _draw_block(self, rect: Rect, kind: LayerKind, color: np.ndarray) -> PlacedElement:
        self._fill(rect, color)
        return PlacedElement(kind=kind, rect=rect)

    def _free_spot(self, w: int, h: int) -> Rect | None:
        """A random position for a w x h box clear of everything placed so far."""
        max_x = self.width - EDGE_MARGIN - w
        max_y = self.height - EDGE_MARGIN - h
        if max_x < EDGE_MARGIN or max_y < EDGE_MARGIN:
            return None
        for _ in range(PLACEMENT_ATTEMPTS):
            x = int(self.rng.integers(EDGE_MARGIN, max_x + 1))
            y = int(self.rng.integers(EDGE_MARGIN, max_y + 1))
            candidate = Rect(x=x, y=y, w=w, h=h)
            padded = Rect(
                x=x - PLACEMENT_MARGIN,
                y=y - PLACEMENT_MARGIN,
                w=w + 2 * PLACEMENT_MARGIN,
                h=h + 2 * PLACEMENT_MARGIN,
            )
            if not any(padded.intersects(o) for o in self.occupied):
                return candidate
        return None

    def _record_group(self, pattern: PlacementKind, bbox: Rect, elements: list[PlacedElement]) -> None:
        self.groups.append(GroupLabel(bbox=bbox))
        self.placements.append(
            Placement(screen_id=self.screen_id, pattern=pattern, bbox=bbox, elements=elements)
        )

    # ------------------------------------------
    # Patterns
    # ------------------------------------------

    def _icon_text_layout(self, icon: int, token: str, vertical: bool) -> tuple[int, int, Rect, Rect]:
        """Group size plus group-relative icon and text rects."""
        tw, th = text_size(token)
        if vertical:
            gw, gh = max(icon, tw), icon + 4 + th
            icon_rect = Rect(x=(gw - icon) // 2, y=0, w=icon, h=icon)
            text_rect = Rect(x=(gw - tw) // 2, y=icon + 4, w=tw, h=th)
        else:
            gw, gh = icon + 6 + tw, max(icon, th)
            icon_rect = Rect(x=0, y=(gh - icon) // 2, w=icon, h=icon)
            text_rect = Rect(x=icon + 6, y=(gh - th) // 2, w=tw, h=th)
        return gw, gh, icon_rect, text_rect

    def place_icon_caption(self) -> int:
        icon = int(self.rng.integers(20, 49))
        token = self._token(grouped=True)
        vertical = bool(self.rng.random() < 0.5)
        gw, gh, icon_rect, text_rect = self._icon_text_layout(icon, token, vertical)
        spot = self._free_spot(gw, gh)
        if spot is None:
            return 0
        self.occupied.append(spot)
        elements = [
            self._draw_block(icon_rect.translate(spot.x, spot.y), LayerKind.BITMAP, self._color(0, 200)),
            self._draw_text(int(spot.x + text_rect.x), int(spot.y + text_rect.y), token),
        ]
        bbox = elements[0].rect.union(elements[1].rect)
        self._record_group("icon_caption", bbox, elements)
        return 1

    def place_banner(self) -> int:
        max_w = min(self.width - 2 * EDGE_MARGIN, 480)
        gw = int(self.rng.integers(min(160, max_w), max_w + 1))
        gh = int(self.rng.integers(72, 129))
        spot = self._free_spot(gw, gh)
        if spot is None:
            return 0
        self.occupied.append(spot)

        pad = BANNER_PADDING
        thumb = gh - 2 * pad
        elements = [
            self._draw_block(spot, LayerKind.SHAPE, self._color(170, 225)),
            self._draw_block(
                Rect(x=spot.x + pad, y=spot.y + pad, w=thumb, h=thumb),
                LayerKind.BITMAP,
                self._color(0, 200),
            ),
        ]
        text_x = int(spot.x) + pad + thumb + 8
        max_chars = max((int(spot.x_max) - pad - text_x + GLYPH_GAP) // (GLYPH_W + GLYPH_GAP), 1)
        for line in range(int(self.rng.integers(2, 4))):
            token = self._token(grouped=True)[:max_chars]
            elements.append(self._draw_text(text_x, int(spot.y) + pad + line * (GLYPH_H + 6), token))
        self._record_group("banner", spot, elements)
        return 1

    def place_list_row(self, remaining: int) -> int:
        rows = min(int(self.rng.integers(2, 5)), remaining)
        icon = 24
        row_gap = 12
        tokens = [self._token(grouped=True) for _ in range(rows)]
        layouts = [self._icon_text_layout(icon, t, vertical=False) for t in tokens]
        block_w = max(gw for gw, _, _, _ in layouts)
        block_h = sum(gh for _, gh, _, _ in layouts) + row_gap * (rows - 1)
        spot = self._free_spot(block_w, block_h)
        if spot is None:
            return 0
        self.occupied.append(spot)

        color = self._color(0, 200)
        y = int(spot.y)
        for token, (_, gh, icon_rect, text_rect) in zip(tokens, layouts, strict=True):
            elements = [
                self._draw_block(icon_rect.translate(spot.x, y), LayerKind.BITMAP, color),
                self._draw_text(int(spot.x + text_rect.x), int(y + text_rect.y), token),
            ]
            self._record_group("list_row", elements[0].rect.union(elements[1].rect), elements)
            y += gh + row_gap
        return rows

    def place_distractor(self) -> None:
        if self.rng.random() < 0.5:
            w, h = (int(v) for v in self.rng.integers(10, 61, size=2))
            spot = self._free_spot(w, h)
            if spot is None:
                return
            self.occupied.append(spot)
            element = self._draw_block(spot, LayerKind.SHAPE, self._color(0, 220))
            pattern: PlacementKind = "distractor_shape"
        else:
            token = self._token(grouped=False)
            w, h = text_size(token)
            spot = self._free_spot(w, h)
            if spot is None:
                return
            self.occupied.append(spot)
            element = self._draw_text(int(spot.x), int(spot.y), token)
            pattern = "distractor_text"
        self.placements.append(
            Placement(
                screen_id=self.screen_id,
                pattern=pattern,
                bbox=element.rect,
                elements=[element],
                grouped=False,
            )
        )

    # ------------------------------------------
    # Screen
    # ------------------------------------------

    def build(self) -> ScreenSample:
        target = int(self.rng.integers(1, MAX_GROUPS_PER_SCREEN + 1))
        placed = 0
        failures = 0
        while placed < target and failures < 3:
            pattern = self.spec.patterns[int(self.rng.integers(0, len(self.spec.patterns)))]
            if pattern == "icon_caption":
                added = self.place_icon_caption()
            elif pattern == "banner":
                added = self.place_banner()
            else:
                added = self.place_list_row(target - placed)
            placed += added
            failures += 0 if added else 1

        n_distractors = int(self.rng.poisson(self.spec.distractor_density * self.width * self.height / 1e5))
        for _ in range(n_distractors):
            self.place_distractor()

        return ScreenSample(
            sample_id=self.screen_id,
            package_id=self.package_id,
            width=self.width,
            height=self.height,
            image=self.image,
            texts=self.texts,
            groups=self.groups,
        )


# ============================================
# Corpus
# ============================================

def generate_with_placements(spec: SynthSpec) -> tuple[list[ScreenSample], list[Placement]]:
    """Generate the corpus and its placement log; deterministic in spec.seed."""
    spec.validate_spec()
    vocabulary = build_vocabulary(spec.vocab_size, spec.seed)

    samples: list[ScreenSample] = []
    placements: list[Placement] = []
    for index in range(spec.n_screens):
        builder = _ScreenBuilder(spec, index, vocabulary)
        samples.append(builder.build())
        placements.extend(builder.placements)

    n_groups = sum(len(s.groups) for s in samples)
    n_texts = sum(len(s.texts) for s in samples)
    logger.info(
        f"Generated {len(samples)} screens (seed={spec.seed}): groups={n_groups} texts={n_texts}"
    )
    return samples, placements


def generate_corpus(spec: SynthSpec) -> list[ScreenSample]:
    """Generate a deterministic synthetic corpus."""
    samples, _ = generate_with_placements(spec)
    return samples


def count_logged_groups(placements: Sequence[Placement]) -> int:
    """Replay the placement log and count group instances."""
    return sum(1 for p in placements if p.grouped)


# ============================================
# Draft Dump
# ============================================

def _element_layer(element: PlacedElement, origin: Rect, layer_id: str) -> dict[str, object]:
    layer: dict[str, object] = {
        "id": layer_id,
        "kind": element.kind.value,
        "name": element.kind.value,
        "frame": [
            element.rect.x - origin.x,
            element.rect.y - origin.y,
            element.rect.w,
            element.rect.h,
        ],
    }
    if element.content is not None:
        layer["content"] = element.content
    return layer


def dump_drafts(
    samples: Sequence[ScreenSample],
    placements: Sequence[Placement],
    directory: Path,
) -> list[Path]:
    """
    Write one draft JSON per synthetic package plus PNG bitmaps.

    Groups become "#group#" containers whose children are the drawn
    elements; the banner tile is a shape child so the union of children
    equals the padded banner box.
    """
    directory.mkdir(parents=True, exist_ok=True)
    image_dir = directory / "images"
    image_dir.mkdir(exist_ok=True)
    origin = Rect(x=0, y=0, w=0, h=0)

    by_screen: dict[str, list[Placement]] = defaultdict(list)
    for placement in placements:
        by_screen[placement.screen_id].append(placement)

    packages: dict[str, list[dict[str, object]]] = defaultdict(list)
    for sample in samples:
        image_ref = f"images/{sample.sample_id}.png"
        Image.fromarray(sample.image).save(directory / image_ref)

        layers: list[dict[str, object]] = []
        for index, placement in enumerate(by_screen[sample.sample_id]):
            layer_id = f"{sample.sample_id}-l{index}"
            if placement.grouped:
                layers.append({
                    "id": layer_id,
                    "kind": "group",
                    "name": f"{placement.pattern} #group#",
                    "frame": placement.bbox.to_xywh(),
                    "children": [
                        _element_layer(e, placement.bbox, f"{layer_id}-{j}")
                        for j, e in enumerate(placement.elements)
                    ],
                })
            else:
                layers.append(_element_layer(placement.elements[0], origin, layer_id))

        packages[sample.package_id].append({
            "id": sample.sample_id,
            "name": sample.sample_id,
            "width": sample.width,
            "height": sample.height,
            "image_ref": image_ref,
            "layers": layers,
        })

    paths: list[Path] = []
    for package_id, artboards in sorted(packages.items()):
        path = directory / f"{package_id}.json"
        path.write_text(
            json.dumps({"package_id": package_id, "artboards": artboards}, indent=2),
            encoding="utf-8",
        )
        paths.append(path)

    logger.info(f"Dumped {len(samples)} screens as {len(paths)} drafts to {directory}")
    return paths


def write_placement_log(placements: Sequence[Placement], path: Path) -> Path:
    payload = {
        "groups": count_logged_groups(placements),
        "placements": [p.model_dump(mode="json") for p in placements],
    }
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path
