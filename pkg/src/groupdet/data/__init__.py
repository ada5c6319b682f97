"""
Data module - Slicing, splitting, COCO storage and the synthetic corpus.
"""

from groupdet.data.coco import build_manifest, read_coco, screens_as_manifest, write_coco
from groupdet.data.slicer import compute_windows, slice_corpus, slice_sample, split_corpus
from groupdet.data.synth import dump_drafts, generate_corpus, generate_with_placements

__all__ = [
    "build_manifest",
    "read_coco",
    "screens_as_manifest",
    "write_coco",
    "compute_windows",
    "slice_corpus",
    "slice_sample",
    "split_corpus",
    "dump_drafts",
    "generate_corpus",
    "generate_with_placements",
]
