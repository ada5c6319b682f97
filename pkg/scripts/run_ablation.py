#!/usr/bin/env python3
"""
Run the fusion ablation on a synthetic corpus.

For each seed a corpus is generated, split by package and sliced; then
one detector per fusion mode (none / text_fusion / box_attention) is
trained and scored on the held-out test split. Prints per-seed AP and the
median per mode, and checks that text fusion holds up against the
baseline (median within 0.02, at least as good in 2 of 3 seeds).

Usage:
    python scripts/run_ablation.py
    python scripts/run_ablation.py --config configs/default.yaml --seeds 0 1 2 --screens 200
"""

import argparse
import json
import os
import statistics
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from rich.console import Console
from rich.table import Table

from groupdet.core.config import get_logger, load_run_config, setup_logging
from groupdet.data.coco import build_manifest, write_coco
from groupdet.data.dataset import GroupDataset
from groupdet.data.slicer import slice_corpus, split_corpus
from groupdet.data.synth import generate_corpus
from groupdet.model.detector import load_checkpoint
from groupdet.training.trainer import evaluate_model, train

logger = get_logger("ablation")
console = Console()

MODES = ("none", "text_fusion", "box_attention")


def build_dataset(config_path: Path | None, seed: int, screens: int, out: Path) -> Path:
    """Generate, split and slice one seeded corpus into <out>/dataset."""
    run = load_run_config(config_path, [f"synth.seed={seed}", f"synth.n_screens={screens}"])
    samples = generate_corpus(run.synth)
    dataset_dir = out / "dataset"
    for name, split in zip(("train", "val", "test"), split_corpus(samples, run.data.ratios, seed), strict=True):
        slices, _ = slice_corpus(split)
        manifest, images = build_manifest(slices)
        write_coco(manifest, dataset_dir / name, images)
    return dataset_dir


def run_mode(config_path: Path | None, dataset_dir: Path, mode: str, seed: int, out: Path) -> float:
    run = load_run_config(config_path, [f"model.fusion={mode}", f"model.seed={seed}"])
    result = train(
        GroupDataset(dataset_dir / "train"),
        GroupDataset(dataset_dir / "val"),
        run.model,
        out / mode,
    )
    model = load_checkpoint(result.best_checkpoint, run.model)
    report, _ = evaluate_model(model, GroupDataset(dataset_dir / "test"))
    logger.info(f"seed={seed} mode={mode} test AP={report.ap:.3f} AP50={report.ap50:.3f}")
    return report.ap


def main() -> int:
    parser = argparse.ArgumentParser(description="Fusion ablation on synthetic screens")
    parser.add_argument("--config", type=Path, default=Path("configs/default.yaml"))
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--screens", type=int, default=200)
    parser.add_argument("--out", type=Path, default=Path("runs/ablation"))
    args = parser.parse_args()

    setup_logging()
    results: dict[str, list[float]] = {mode: [] for mode in MODES}
    for seed in args.seeds:
        seed_dir = args.out / f"seed{seed}"
        dataset_dir = build_dataset(args.config, seed, args.screens, seed_dir)
        for mode in MODES:
            results[mode].append(run_mode(args.config, dataset_dir, mode, seed, seed_dir))

    table = Table(title="Held-out AP by fusion mode")
    table.add_column("Mode", style="cyan")
    for seed in args.seeds:
        table.add_column(f"seed {seed}", justify="right")
    table.add_column("Median", justify="right", style="bold")
    for mode, aps in results.items():
        table.add_row(mode, *(f"{ap:.3f}" for ap in aps), f"{statistics.median(aps):.3f}")
    console.print(table)

    baseline, fused = results["none"], results["text_fusion"]
    holds = statistics.median(fused) >= statistics.median(baseline) - 0.02
    wins = sum(f >= b for f, b in zip(fused, baseline, strict=True))
    console.print(f"text_fusion median within 0.02 of baseline: {holds}; at least baseline in {wins}/{len(baseline)} seeds")

    (args.out / "ablation.json").write_text(json.dumps(results, indent=2), encoding="utf-8")
    return 0 if holds else 1


if __name__ == "__main__":
    sys.exit(main())
