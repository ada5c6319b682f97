"""
Trainer - Seeded SGD training of the group detector.

Each epoch runs the shuffled training split once (order fixed by the
seed), evaluates the validation split with cocoeval, appends one JSON line
to metrics.jsonl and writes last.pt; best.pt tracks the highest val AP.
A non-finite loss restores the last good weights and raises
DivergenceDetected pointing at them.
"""

import json
import random
import statistics
import time
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch.utils.data import DataLoader

from groupdet.core.config import DetectorConfig, get_logger
from groupdet.core.errors import DataError, DivergenceDetected
from groupdet.core.types import Detection, EvalReport
from groupdet.data.dataset import DetectionSample, GroupDataset, collate_samples, hflip
from groupdet.evaluation.cocoeval import evaluate
from groupdet.model.detector import GroupDetector, load_weights, read_checkpoint, save_checkpoint
from groupdet.model.textenc import TextEncoder

logger = get_logger("training.trainer")

METRICS_FILE = "metrics.jsonl"
BEST_CHECKPOINT = "best.pt"
LAST_CHECKPOINT = "last.pt"


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def lr_for_epoch(config: DetectorConfig, epoch: int) -> float:
    """Step decay: lr0 * gamma ** (epoch // step)."""
    return config.lr * config.lr_gamma ** (epoch // config.lr_step)


def lr_at(config: DetectorConfig, epoch: int, iteration: int) -> float:
    """Epoch learning rate with optional linear warmup over the first iterations."""
    lr = lr_for_epoch(config, epoch)
    if config.warmup_iters and iteration < config.warmup_iters:
        lr *= (iteration + 1) / config.warmup_iters
    return lr


def build_optimizer(model: GroupDetector, config: DetectorConfig) -> torch.optim.SGD:
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.SGD(
        params,
        lr=config.lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )


# ============================================
# Results
# ============================================

@dataclass
class EpochMetrics:
    """One line of metrics.jsonl."""

    epoch: int
    loss: float
    lr: float
    iterations: int
    ap: float = -1.0
    ap50: float = -1.0
    ap75: float = -1.0
    ap_s: float = -1.0
    ap_m: float = -1.0
    ap_l: float = -1.0
    seconds: float = 0.0


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    history: list[EpochMetrics] = field(default_factory=list)
    iteration_losses: list[list[float]] = field(default_factory=list)
    """Per-epoch lists of total loss per iteration."""

    best_ap: float = -1.0

    def median_loss(self, *epochs: int) -> float:
        """Median per-iteration loss over the given epochs."""
        return statistics.median(loss for epoch in epochs for loss in self.iteration_losses[epoch])


# ============================================
# Evaluation
# ============================================

@torch.no_grad()
def predict_dataset(model: GroupDetector, dataset: GroupDataset) -> dict[int, list[Detection]]:
    detections: dict[int, list[Detection]] = {}
    for index in range(len(dataset)):
        sample = dataset[index]
        detections[sample.image_id] = model.predict(sample.image, sample.texts)
    return detections


def evaluate_model(
    model: GroupDetector,
    dataset: GroupDataset,
    max_dets: int = 100,
) -> tuple[EvalReport, dict[int, list[Detection]]]:
    """Run the detector over a split and score it."""
    detections = predict_dataset(model, dataset)
    return evaluate(dataset.manifest, detections, max_dets=max_dets), detections


# ============================================
# Training
# ============================================

class Trainer:
    """Trains one detector instance; one logical stream of work."""

    def __init__(self, config: DetectorConfig, output_dir: Path, encoder: TextEncoder | None = None):
        self.config = config
        self.output_dir = output_dir
        seed_everything(config.seed)
        self.model = GroupDetector(config, encoder=encoder)
        self.optimizer = build_optimizer(self.model, config)
        self.augment_rng = torch.Generator().manual_seed(config.seed + 1)

    @property
    def best_path(self) -> Path:
        return self.output_dir / BEST_CHECKPOINT

    @property
    def last_path(self) -> Path:
        return self.output_dir / LAST_CHECKPOINT

    @property
    def metrics_path(self) -> Path:
        return self.output_dir / METRICS_FILE

    def _augment(self, batch: Sequence[DetectionSample]) -> list[DetectionSample]:
        if self.config.hflip_prob <= 0:
            return list(batch)
        return [
            hflip(s) if float(torch.rand(1, generator=self.augment_rng)) < self.config.hflip_prob else s
            for s in batch
        ]

    def _loader(self, dataset: GroupDataset) -> DataLoader[DetectionSample]:
        return DataLoader(
            dataset,
            batch_size=self.config.batch_size,
            shuffle=True,
            generator=torch.Generator().manual_seed(self.config.seed),
            collate_fn=collate_samples,
            num_workers=self.config.num_workers,
        )

    def _diverged(self, epoch: int, iteration: int) -> DivergenceDetected:
        load_weights(self.model, read_checkpoint(self.last_path)["state_dict"])
        logger.error(f"Loss is not finite at epoch {epoch}, iteration {iteration}; restored {self.last_path}")
        return DivergenceDetected(
            f"training diverged at epoch {epoch}, iteration {iteration}",
            checkpoint=self.last_path,
        )

    def train_step(self, batch: Sequence[DetectionSample], epoch: int, iteration: int) -> float:
        lr = lr_at(self.config, epoch, iteration)
        for group in self.optimizer.param_groups:
            group["lr"] = lr

        batch = self._augment(batch)
        self.model.train()
        losses = self.model(
            [s.image for s in batch],
            [s.texts for s in batch],
            [s.boxes for s in batch],
        )
        assert isinstance(losses, dict)
        loss = torch.stack(list(losses.values())).sum()
        if not torch.isfinite(loss):
            raise self._diverged(epoch, iteration)

        self.optimizer.zero_grad()
        loss.backward()
        if self.config.grad_clip_norm is not None:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.grad_clip_norm)
        self.optimizer.step()
        return float(loss.detach())

    def fit(self, train_set: GroupDataset, val_set: GroupDataset | None = None) -> TrainResult:
        """Train for the configured epochs (or until max_iters)."""
        if len(train_set) == 0:
            raise DataError("training split is empty")

        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.metrics_path.write_text("", encoding="utf-8")
        self.best_path.unlink(missing_ok=True)
        save_checkpoint(self.model, self.last_path, {"epoch": -1})

        result = TrainResult(best_checkpoint=self.best_path, last_checkpoint=self.last_path)
        loader = self._loader(train_set)
        iteration = 0
        max_iters = self.config.max_iters

        logger.info(
            f"Training {self.config.backbone_preset} detector (fusion={self.config.fusion}) "
            f"on {len(train_set)} images for {self.config.epochs} epochs"
        )
        for epoch in range(self.config.epochs):
            started = time.perf_counter()
            losses: list[float] = []
            for batch in loader:
                if max_iters is not None and iteration >= max_iters:
                    break
                losses.append(self.train_step(batch, epoch, iteration))
                iteration += 1
            if not losses:
                break

            metrics = EpochMetrics(
                epoch=epoch,
                loss=statistics.fmean(losses),
                lr=lr_for_epoch(self.config, epoch),
                iterations=iteration,
            )
            if val_set is not None and len(val_set):
                report, _ = evaluate_model(self.model, val_set, self.config.max_dets)
                metrics.ap, metrics.ap50, metrics.ap75 = report.ap, report.ap50, report.ap75
                metrics.ap_s, metrics.ap_m, metrics.ap_l = report.ap_s, report.ap_m, report.ap_l
            metrics.seconds = time.perf_counter() - started

            result.history.append(metrics)
            result.iteration_losses.append(losses)
            with self.metrics_path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(asdict(metrics)) + "\n")

            save_checkpoint(self.model, self.last_path, {"epoch": epoch})
            improved = val_set is None or not self.best_path.exists() or metrics.ap > result.best_ap
            if improved:
                result.best_ap = max(metrics.ap, result.best_ap)
                save_checkpoint(self.model, self.best_path, {"epoch": epoch, "ap": metrics.ap})

            logger.info(
                f"Epoch {epoch}: loss={metrics.loss:.4f} lr={metrics.lr:g} "
                f"val AP={metrics.ap:.3f} AP50={metrics.ap50:.3f} ({metrics.seconds:.1f}s)"
            )

        return result


def train(
    train_set: GroupDataset,
    val_set: GroupDataset | None,
    config: DetectorConfig,
    output_dir: Path,
    encoder: TextEncoder | None = None,
) -> TrainResult:
    """Train a detector and return its checkpoints and metric history."""
    return Trainer(config, output_dir, encoder=encoder).fit(train_set, val_set)
