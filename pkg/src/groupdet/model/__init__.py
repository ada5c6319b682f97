"""
Model module - Text encoders, fusion plug-ins and the two-stage detector.
"""

from groupdet.model.detector import GroupDetector, detect, load_checkpoint, save_checkpoint
from groupdet.model.fusion import BoxAttention, TextFusion, build_box_attention, build_text_map
from groupdet.model.textenc import ExternalEncoder, HashedNgramEncoder, get_encoder

__all__ = [
    "GroupDetector",
    "detect",
    "load_checkpoint",
    "save_checkpoint",
    "BoxAttention",
    "TextFusion",
    "build_box_attention",
    "build_text_map",
    "ExternalEncoder",
    "HashedNgramEncoder",
    "get_encoder",
]
