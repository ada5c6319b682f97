"""
Ingest module - Design-draft parsing into screen samples.
"""

from groupdet.ingest.draft import (
    collect_group_labels,
    extract_screen_samples,
    load_drafts,
    parse_draft,
    serialize_draft,
)

__all__ = [
    "collect_group_labels",
    "extract_screen_samples",
    "load_drafts",
    "parse_draft",
    "serialize_draft",
]
