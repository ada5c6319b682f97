"""
Text Fusion and Box Attention - Plug-in text-layer signals for the detector.

Text fusion:
    T_i holds the embedding e_i on the pixel block of text i, T is the mean
    over all texts. A conv with the stem's geometry (K -> K) and a zero
    initialized 1x1 projection (K -> D) turn T into T', added to the stem
    output C: F = C + T'.

Box attention:
    B_i is a 3 x H_i x W_i map per pyramid level. Channel 0 is the mean of
    the per-text box masks, channel 1 is 0, channel 2 is 1. A zero
    initialized 1x1 conv (3 -> D) per level is added to the FPN output:
    M_i = F_i + conv(B_i).

Both projections start at zero, so either mechanism is an exact identity
until trained.
"""

import math
from collections.abc import Sequence
from functools import lru_cache

import numpy as np
import torch
from torch import Tensor, nn

from groupdet.core.errors import ShapeMismatch
from groupdet.core.types import TextLayerRecord
from groupdet.model.textenc import HashedNgramEncoder, TextEncoder


# ============================================
# Rasterization
# ============================================

def pixel_block(
    bbox: tuple[float, float, float, float],
    height: int,
    width: int,
) -> tuple[int, int, int, int]:
    """
    Half-open block (row0, row1, col0, col1) covered by a normalized box.

    Rows span [floor(y_min*H), ceil(y_max*H)) clamped to the map; a box
    thinner than one pixel still marks one row (or column).
    A zero-extent box exactly on a grid line marks the cell after the line.
    """
    x_min, y_min, x_max, y_max = bbox

    def span(lo: float, hi: float, size: int) -> tuple[int, int]:
        start = min(max(math.floor(lo * size), 0), size - 1)
        stop = min(max(math.ceil(hi * size), start + 1), size)
        return start, stop

    r0, r1 = span(y_min, y_max, height)
    c0, c1 = span(x_min, x_max, width)
    return r0, r1, c0, c1


def _coverage(texts: Sequence[TextLayerRecord], height: int, width: int) -> np.ndarray:
    """(N, H, W) float masks of every text block."""
    masks = np.zeros((len(texts), height, width), dtype=np.float64)
    for i, text in enumerate(texts):
        r0, r1, c0, c1 = pixel_block(text.bbox, height, width)
        masks[i, r0:r1, c0:c1] = 1.0
    return masks


@lru_cache(maxsize=4)
def _default_encoder(dim: int) -> HashedNgramEncoder:
    return HashedNgramEncoder(dim=dim)


def build_text_map(
    texts: Sequence[TextLayerRecord],
    dim: int,
    height: int,
    width: int,
    encoder: TextEncoder | None = None,
) -> Tensor:
    """
    The K x H x W text feature map T = mean_i T_i.

    Args:
        texts: Text records with boxes normalized to the map
        dim: Embedding size K
        height: Map height H
        width: Map width W
        encoder: Text encoder; the hashed n-gram encoder by default

    Returns:
        float32 tensor; all zeros when there are no texts
    """
    if dim < 1 or height < 1 or width < 1:
        raise ValueError(f"text map needs K, H, W >= 1, got {dim}, {height}, {width}")
    if not texts:
        return torch.zeros(dim, height, width)

    encoder = encoder or _default_encoder(dim)
    embeddings = np.stack([encoder.encode(t.content) for t in texts]).astype(np.float64)
    if embeddings.shape[1] != dim:
        raise ShapeMismatch(f"encoder returned {embeddings.shape[1]} dims, expected {dim}")

    masks = _coverage(texts, height, width)
    text_map = np.einsum("nk,nhw->khw", embeddings, masks) / len(texts)
    return torch.from_numpy(text_map.astype(np.float32))


def build_box_attention(texts: Sequence[TextLayerRecord], height: int, width: int) -> Tensor:
    """The 3 x H_i x W_i box attention map B_i for one pyramid level."""
    if height < 1 or width < 1:
        raise ValueError(f"attention map needs H, W >= 1, got {height}, {width}")
    attention = torch.zeros(3, height, width)
    attention[2] = 1.0
    if texts:
        attention[0] = torch.from_numpy(_coverage(texts, height, width).mean(axis=0).astype(np.float32))
    return attention


def rescale_texts(
    texts: Sequence[TextLayerRecord],
    scale_x: float,
    scale_y: float,
) -> list[TextLayerRecord]:
    """Re-normalize boxes to a padded canvas (scale = content size / canvas size, both <= 1)."""
    return [
        TextLayerRecord(
            content=t.content,
            bbox=(
                t.bbox[0] * scale_x,
                t.bbox[1] * scale_y,
                t.bbox[2] * scale_x,
                t.bbox[3] * scale_y,
            ),
        )
        for t in texts
    ]


def batch_text_maps(
    texts_per_image: Sequence[Sequence[TextLayerRecord]],
    dim: int,
    height: int,
    width: int,
    encoder: TextEncoder | None = None,
) -> Tensor:
    """(B, K, H, W) stack of text maps."""
    return torch.stack([build_text_map(t, dim, height, width, encoder) for t in texts_per_image])


def batch_box_attention(
    texts_per_image: Sequence[Sequence[TextLayerRecord]],
    level_shapes: Sequence[tuple[int, int]],
) -> list[Tensor]:
    """One (B, 3, H_i, W_i) attention tensor per pyramid level."""
    return [
        torch.stack([build_box_attention(t, h, w) for t in texts_per_image])
        for h, w in level_shapes
    ]


# ============================================
# Modules
# ============================================

class TextFusion(nn.Module):
    """Projects a text map to stem resolution and adds it to the stem output."""

    def __init__(self, text_dim: int, channels: int, stem_pool: bool = True):
        super().__init__()
        self.stem_conv = nn.Conv2d(text_dim, text_dim, kernel_size=7, stride=2, padding=3)
        self.pool = nn.MaxPool2d(kernel_size=3, stride=2, padding=1) if stem_pool else nn.Identity()
        self.proj = nn.Conv2d(text_dim, channels, kernel_size=1)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def project(self, text_map: Tensor) -> Tensor:
        return self.proj(self.pool(self.stem_conv(text_map)))

    def forward(self, stem: Tensor, text_map: Tensor) -> Tensor:
        projected = self.project(text_map)
        if projected.shape != stem.shape:
            raise ShapeMismatch(
                f"projected text map {tuple(projected.shape)} does not match stem {tuple(stem.shape)}"
            )
        return stem + projected


class BoxAttention(nn.Module):
    """One zero-initialized 3 -> D 1x1 conv per pyramid level."""

    def __init__(self, channels: int, levels: int = 5):
        super().__init__()
        self.convs = nn.ModuleList(nn.Conv2d(3, channels, kernel_size=1) for _ in range(levels))
        for conv in self.convs:
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)

    def forward(self, features: Sequence[Tensor], attention: Sequence[Tensor]) -> list[Tensor]:
        if len(features) != len(self.convs) or len(attention) != len(self.convs):
            raise ShapeMismatch(
                f"expected {len(self.convs)} levels, got {len(features)} features "
                f"and {len(attention)} attention maps"
            )
        return [
            box_attention_forward(f, b, conv)
            for f, b, conv in zip(features, attention, self.convs, strict=True)
        ]


def text_fusion_forward(stem: Tensor, text_map: Tensor, module: TextFusion) -> Tensor:
    """F = C + T' for a batched stem output C and text map T."""
    return module(stem, text_map)


def box_attention_forward(feature: Tensor, attention: Tensor, conv: nn.Conv2d) -> Tensor:
    """M_i = F_i + conv(B_i); spatial sizes must agree."""
    if feature.shape[-2:] != attention.shape[-2:]:
        raise ShapeMismatch(
            f"attention map {tuple(attention.shape[-2:])} does not match "
            f"feature map {tuple(feature.shape[-2:])}"
        )
    projected = conv(attention)
    if projected.shape != feature.shape:
        raise ShapeMismatch(f"projected attention {tuple(projected.shape)} != {tuple(feature.shape)}")
    return feature + projected
