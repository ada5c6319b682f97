"""
RoI Align - Quantization-free region pooling by bilinear sampling.

Each output bin averages sampling_ratio x sampling_ratio bilinear samples
taken at regular offsets inside the bin. Coordinates are never rounded.
With aligned=True box corners are shifted by half a pixel so that a box
[x, x+1) covers exactly one feature cell. Sample points more than one
cell outside the map contribute zero; points between -1 and 0 are clamped
to the border. Zero-area RoIs produce zero output.
"""

import torch
from torch import Tensor

ROI_CHUNK = 128


def _axis_weights(coords: Tensor, size: int) -> tuple[Tensor, Tensor, Tensor, Tensor, Tensor]:
    """Low/high indices, their weights and a validity mask along one axis."""
    valid = (coords >= -1.0) & (coords <= size)
    c = coords.clamp(min=0.0)
    low = c.floor().long()
    at_edge = low >= size - 1
    low = torch.where(at_edge, torch.full_like(low, size - 1), low)
    high = torch.where(at_edge, low, low + 1)
    c = torch.where(at_edge, low.to(c.dtype), c)
    frac = c - low.to(c.dtype)
    return low, high, 1.0 - frac, frac, valid


def _sample_grid(start: Tensor, length: Tensor, bins: int, sampling_ratio: int) -> Tensor:
    """(R, bins * sampling_ratio) sample coordinates along one axis."""
    bin_size = length / bins
    steps = torch.arange(bins * sampling_ratio, dtype=start.dtype, device=start.device)
    # Sample k sits in bin k // s at sub-offset (k % s + 0.5) / s
    offsets = (steps // sampling_ratio) + ((steps % sampling_ratio) + 0.5) / sampling_ratio
    return start[:, None] + offsets[None, :] * bin_size[:, None]


def _align_chunk(
    flat: Tensor,
    batch_idx: Tensor,
    ys: Tensor,
    xs: Tensor,
    height: int,
    width: int,
) -> Tensor:
    """Bilinear samples (R, C, Sy, Sx) for one chunk of RoIs."""
    y_lo, y_hi, wy_lo, wy_hi, vy = _axis_weights(ys, height)
    x_lo, x_hi, wx_lo, wx_hi, vx = _axis_weights(xs, width)

    b = batch_idx[:, None, None]
    result = torch.zeros(
        (ys.shape[0], ys.shape[1], xs.shape[1], flat.shape[1]), dtype=flat.dtype, device=flat.device
    )
    for y_idx, wy in ((y_lo, wy_lo), (y_hi, wy_hi)):
        for x_idx, wx in ((x_lo, wx_lo), (x_hi, wx_hi)):
            index = y_idx[:, :, None] * width + x_idx[:, None, :]
            weight = wy[:, :, None] * wx[:, None, :]
            result = result + flat[b, :, index] * weight[..., None]

    valid = (vy[:, :, None] & vx[:, None, :]).to(flat.dtype)
    result = result * valid[..., None]
    return result.permute(0, 3, 1, 2)


def roi_align(
    features: Tensor,
    rois: Tensor,
    output_size: int = 7,
    spatial_scale: float = 1.0,
    sampling_ratio: int = 2,
    aligned: bool = True,
) -> Tensor:
    """
    Pool a fixed-size feature patch for each RoI.

    Args:
        features: (N, C, H, W) feature maps
        rois: (R, 5) rows of (batch_index, x_min, y_min, x_max, y_max) in input pixels
        output_size: Bins per side
        spatial_scale: Feature cells per input pixel (1 / stride)
        sampling_ratio: Samples per bin along each axis
        aligned: Shift corners by half a pixel

    Returns:
        (R, C, output_size, output_size)
    """
    n_rois = rois.shape[0]
    _, channels, height, width = features.shape
    out = features.new_zeros((n_rois, channels, output_size, output_size))
    if n_rois == 0:
        return out

    rois = rois.to(features.dtype)
    offset = 0.5 if aligned else 0.0
    x1 = rois[:, 1] * spatial_scale - offset
    y1 = rois[:, 2] * spatial_scale - offset
    x2 = rois[:, 3] * spatial_scale - offset
    y2 = rois[:, 4] * spatial_scale - offset
    roi_w = x2 - x1
    roi_h = y2 - y1
    if not aligned:
        roi_w = roi_w.clamp(min=1.0)
        roi_h = roi_h.clamp(min=1.0)

    degenerate = (rois[:, 3] <= rois[:, 1]) | (rois[:, 4] <= rois[:, 2])
    keep = torch.where(~degenerate)[0]
    if keep.numel() == 0:
        return out

    flat = features.reshape(features.shape[0], channels, height * width)
    s = sampling_ratio
    pooled_chunks: list[Tensor] = []
    for start in range(0, keep.numel(), ROI_CHUNK):
        idx = keep[start:start + ROI_CHUNK]
        ys = _sample_grid(y1[idx], roi_h[idx], output_size, s)
        xs = _sample_grid(x1[idx], roi_w[idx], output_size, s)
        samples = _align_chunk(flat, rois[idx, 0].long(), ys, xs, height, width)
        pooled = samples.reshape(idx.numel(), channels, output_size, s, output_size, s).mean(dim=(3, 5))
        pooled_chunks.append(pooled)

    return out.index_copy(0, keep, torch.cat(pooled_chunks))
