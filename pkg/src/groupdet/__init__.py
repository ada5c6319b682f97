"""
GroupDet

Detects UI layer groups (sets of image and text layers sharing one meaning)
in design-draft screens with a two-stage detector, optionally fused with
text-layer content and positions.
"""

__version__ = "0.1.0"

from groupdet.core.config import settings
from groupdet.core.types import (
    Artboard,
    DatasetManifest,
    DesignDraft,
    Detection,
    EvalReport,
    GroupLabel,
    Layer,
    LayerKind,
    Rect,
    ScreenSample,
    SliceSample,
    SynthSpec,
    TextLayerRecord,
)

__all__ = [
    "settings",
    "Artboard",
    "DatasetManifest",
    "DesignDraft",
    "Detection",
    "EvalReport",
    "GroupLabel",
    "Layer",
    "LayerKind",
    "Rect",
    "ScreenSample",
    "SliceSample",
    "SynthSpec",
    "TextLayerRecord",
]
