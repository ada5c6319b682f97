"""
Configuration management for GroupDet.

Two layers:
- Settings: process environment (pydantic-settings, GROUPDET_ prefix, .env file)
- RunConfig: the experiment config file (YAML) with `--set key=value` overrides

Unknown keys in a run config are rejected; every command snapshots the
resolved config next to its outputs.
"""

import logging
import sys
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from groupdet.core.errors import ConfigError
from groupdet.core.types import SynthSpec


class Settings(BaseSettings):
    """Application settings with environment variable binding."""

    model_config = SettingsConfigDict(
        env_prefix="GROUPDET_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # ==========================================
    # Outputs
    # ==========================================
    out: Path | None = None
    """Overrides io.output of every run config (GROUPDET_OUT)."""

    # ==========================================
    # External Text Encoder
    # ==========================================
    openai_api_key: str = ""
    openai_embedding_model: str = "text-embedding-3-small"

    # ==========================================
    # Logging
    # ==========================================
    log_level: str = "INFO"
    log_file: Path | None = None


# Global settings instance
settings = Settings()


def setup_logging(level: str | None = None) -> None:
    """Configure application logging."""
    log_level = level or settings.log_level

    handlers: list[logging.Handler] = [
        logging.StreamHandler(sys.stdout),
    ]

    if settings.log_file:
        handlers.append(logging.FileHandler(settings.log_file))

    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format="%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
        handlers=handlers,
        force=True,
    )

    # Quiet noisy libraries
    logging.getLogger("PIL").setLevel(logging.WARNING)
    logging.getLogger("httpx").setLevel(logging.WARNING)
    logging.getLogger("openai").setLevel(logging.WARNING)


def get_logger(name: str) -> logging.Logger:
    """Get a logger with the given name."""
    return logging.getLogger(f"groupdet.{name}")


# ============================================
# Run Config Sections
# ============================================

FusionMode = Literal["none", "text_fusion", "box_attention", "both"]


class DetectorConfig(BaseModel):
    """Detector architecture, target assignment, inference and optimizer constants."""

    model_config = ConfigDict(extra="forbid")

    # Architecture
    backbone_preset: Literal["full", "tiny"] = "full"
    pretrained: bool = False
    """Load ImageNet weights into the full backbone (torchvision download)."""

    pretrained_path: Path | None = None
    """Optional backbone state dict loaded after construction."""

    fpn_channels: int = 256
    representation_size: int = 1024
    fusion: FusionMode = "none"
    text_encoder: Literal["hashed_ngram", "external"] = "hashed_ngram"
    text_dim: int = 16
    n_classes: int = 2
    """Foreground classes plus background."""

    # Anchors
    anchor_sizes: list[float] = Field(default_factory=lambda: [32.0, 64.0, 128.0, 256.0, 512.0])
    anchor_ratios: list[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0, 8.0])
    strides: list[int] = Field(default_factory=lambda: [4, 8, 16, 32, 64])
    resize: tuple[int, int] = (800, 1300)
    """(short side target, long side cap)."""

    # RPN
    rpn_pos_iou: float = 0.7
    rpn_neg_iou: float = 0.3
    rpn_batch_size: int = 256
    rpn_pos_fraction: float = 0.5
    rpn_pre_nms_train: int = 2000
    rpn_post_nms_train: int = 1000
    rpn_pre_nms_test: int = 1000
    rpn_post_nms_test: int = 1000
    rpn_nms_iou: float = 0.7

    # RoI head
    roi_pos_iou: float = 0.5
    roi_batch_size: int = 512
    roi_pos_fraction: float = 0.25
    roi_output: int = 7
    nms_iou: float = 0.5
    score_thresh: float = 0.05
    max_dets: int = 100

    # Optimization
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_step: int = 10
    lr_gamma: float = 0.1
    epochs: int = 72
    batch_size: int = 2
    warmup_iters: int = 0
    grad_clip_norm: float | None = None
    max_iters: int | None = None
    hflip_prob: float = 0.0
    num_workers: int = 0
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self) -> "DetectorConfig":
        if len(self.anchor_sizes) != len(self.strides) or len(self.strides) != 5:
            raise ValueError("one anchor size per pyramid level (5 levels) is required")
        if any(v <= 0 for v in [*self.anchor_sizes, *self.anchor_ratios, *self.strides]):
            raise ValueError("anchor sizes, ratios and strides must be positive")
        thresholds = {
            "rpn_pos_iou": self.rpn_pos_iou,
            "rpn_neg_iou": self.rpn_neg_iou,
            "roi_pos_iou": self.roi_pos_iou,
            "rpn_nms_iou": self.rpn_nms_iou,
            "nms_iou": self.nms_iou,
            "score_thresh": self.score_thresh,
            "rpn_pos_fraction": self.rpn_pos_fraction,
            "roi_pos_fraction": self.roi_pos_fraction,
        }
        for name, value in thresholds.items():
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0,1)")
        if self.rpn_neg_iou > self.rpn_pos_iou:
            raise ValueError("rpn_neg_iou must not exceed rpn_pos_iou")
        if self.resize[0] <= 0 or self.resize[1] < self.resize[0]:
            raise ValueError("resize must be (short, long) with 0 < short <= long")
        if self.text_dim < 1 or self.n_classes < 2:
            raise ValueError("text_dim >= 1 and n_classes >= 2 are required")
        return self

    @property
    def uses_text_fusion(self) -> bool:
        return self.fusion in ("text_fusion", "both")

    @property
    def uses_box_attention(self) -> bool:
        return self.fusion in ("box_attention", "both")


class DataConfig(BaseModel):
    """Where drafts and datasets live, and how screens are split."""

    model_config = ConfigDict(extra="forbid")

    drafts_dir: Path | None = None
    """Draft JSON files; defaults to <output>/drafts."""

    image_root: Path | None = None
    """Base for artboard image_ref paths; defaults to drafts_dir."""

    dataset_dir: Path | None = None
    """COCO dataset root holding train/val/test; defaults to <output>/dataset."""

    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    segment: bool = True
    """Slice screens into squares; false writes whole screens (segmentation ablation)."""

    strict_images: bool = False

    @model_validator(mode="after")
    def _check_ratios(self) -> "DataConfig":
        if any(r <= 0 for r in self.ratios) or abs(sum(self.ratios) - 1.0) > 1e-6:
            raise ValueError("ratios must be positive and sum to 1")
        return self


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    split: Literal["train", "val", "test"] = "test"
    checkpoint: Path | None = None
    """Defaults to <output>/train/best.pt."""

    max_dets: int = 100


class IOConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    output: Path = Path("runs/default")


class RunConfig(BaseModel):
    """A complete, reproducible run configuration."""

    model_config = ConfigDict(extra="forbid")

    data: DataConfig = Field(default_factory=DataConfig)
    synth: SynthSpec = Field(default_factory=SynthSpec)
    model: DetectorConfig = Field(default_factory=DetectorConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    io: IOConfig = Field(default_factory=IOConfig)

    # ==========================================
    # Resolved Paths
    # ==========================================
    @property
    def output_dir(self) -> Path:
        return self.io.output

    @property
    def drafts_dir(self) -> Path:
        return self.data.drafts_dir or self.output_dir / "drafts"

    @property
    def image_root(self) -> Path:
        return self.data.image_root or self.drafts_dir

    @property
    def dataset_dir(self) -> Path:
        return self.data.dataset_dir or self.output_dir / "dataset"

    @property
    def train_dir(self) -> Path:
        return self.output_dir / "train"

    @property
    def checkpoint_path(self) -> Path:
        return self.eval.checkpoint or self.train_dir / "best.pt"


# ============================================
# Loading
# ============================================

def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply `section.key=value` overrides; values use YAML scalar rules."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        key, raw_value = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"empty override key: {item!r}")
        node = data
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping value")
            node = child
        node[parts[-1]] = yaml.safe_load(raw_value)
    return data


def load_run_config(path: Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Load a run config from YAML, apply overrides and GROUPDET_OUT."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}") from e
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping")
        data = loaded or {}

    data = apply_overrides(data, overrides or [])

    # Re-read the environment so GROUPDET_OUT set after import still applies
    env_out = Settings().out
    if env_out is not None:
        data.setdefault("io", {})["output"] = str(env_out)

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def write_resolved_config(config: RunConfig, directory: Path) -> Path:
    """Snapshot the resolved config next to a command's outputs."""
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "resolved_config.yaml"
    path.write_text(
        yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False),
        encoding="utf-8",
    )
    return path
