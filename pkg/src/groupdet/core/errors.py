"""
Error hierarchy for GroupDet.

Every error carries the process exit code the CLI maps it to:
- 2: configuration errors
- 3: data errors (schema, images, splits) and model errors (shapes, checkpoints)
- 4: runtime divergence during training
"""

from pathlib import Path


class GroupDetError(Exception):
    """Base class for all GroupDet errors."""

    exit_code: int = 1


# ============================================
# Configuration
# ============================================

class ConfigError(GroupDetError):
    """Invalid or unknown configuration keys."""

    exit_code = 2


# ============================================
# Data
# ============================================

class DataError(GroupDetError):
    """Problems with drafts, images, or datasets."""

    exit_code = 3


class SchemaError(DataError):
    """A document does not match its schema."""


class EmptyDraft(DataError):
    """A draft has no artboards."""


class ImageMismatch(DataError):
    """An artboard bitmap does not have the artboard's size."""


class MissingImage(DataError):
    """An artboard bitmap cannot be found."""


class UnreadableImage(DataError):
    """A bitmap exists but cannot be decoded."""


class FewerPackagesThanSplits(DataError):
    """Not enough packages to give every split at least one."""


class InvalidSpec(DataError):
    """A synthetic corpus spec is out of range."""


class UnknownImageId(DataError):
    """Detections reference an image the manifest does not know."""


# ============================================
# Model
# ============================================

class ModelError(GroupDetError):
    """Shape or weight problems inside the detector."""

    exit_code = 3


class ShapeMismatch(ModelError):
    """Two feature maps that must be added disagree in shape."""


class WeightMismatch(ModelError):
    """A checkpoint does not fit the configured model."""


class DivergenceDetected(GroupDetError):
    """Training loss became non-finite."""

    exit_code = 4

    def __init__(self, message: str, checkpoint: Path | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint
