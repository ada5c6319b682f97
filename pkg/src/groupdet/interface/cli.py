"""
GroupDet CLI - Command-line interface.

Commands:
- groupdet synth   → Generate a synthetic corpus as drafts + bitmaps
- groupdet slice   → Ingest drafts, split by package, slice, write COCO splits
- groupdet train   → Train the detector on the train split
- groupdet eval    → Score a checkpoint (or a detections file) on a split
- groupdet predict → Detect groups on one image
- groupdet render  → Draw detections over an image

Every command takes --config PATH and repeated --set key=value overrides.
Exit codes: 0 success, 2 config error, 3 data error, 4 training divergence.
"""

import json
from collections.abc import Callable
from functools import wraps
from pathlib import Path
from typing import Any, Optional, TypeVar

import typer
from pydantic import TypeAdapter, ValidationError
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from groupdet.core.config import RunConfig, load_run_config, setup_logging, write_resolved_config
from groupdet.core.errors import DataError, GroupDetError, SchemaError
from groupdet.core.types import Detection, EvalReport, ScreenSample, TextLayerRecord
from groupdet.data.coco import build_manifest, manifest_summary, screens_as_manifest, write_coco
from groupdet.data.slicer import is_package_closed, slice_corpus, split_corpus
from groupdet.data.synth import count_logged_groups, dump_drafts, generate_with_placements, write_placement_log
from groupdet.ingest.draft import extract_screen_samples, load_drafts, load_image

app = typer.Typer(
    name="groupdet",
    help="GroupDet - UI layer group detection",
    no_args_is_help=True,
)
console = Console()

SPLITS = ("train", "val", "test")
F = TypeVar("F", bound=Callable[..., Any])

ConfigOption = typer.Option(None, "--config", "-c", help="Run config YAML")
SetOption = typer.Option([], "--set", "-s", help="Override as section.key=value (repeatable)")


def handle_errors(command: F) -> F:
    """Print GroupDetError failures and exit with their code."""

    @wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return command(*args, **kwargs)
        except GroupDetError as e:
            console.print(f"[red]Error ({type(e).__name__}): {e}[/red]")
            raise typer.Exit(code=e.exit_code) from e

    return wrapper  # type: ignore[return-value]


def _load(config: Optional[Path], overrides: list[str]) -> RunConfig:
    setup_logging()
    return load_run_config(config, overrides)


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path} is not valid JSON: {e}") from e


def _parse(adapter: TypeAdapter[Any], payload: Any, path: Path) -> Any:
    try:
        return adapter.validate_python(payload)
    except ValidationError as e:
        raise SchemaError(f"{path} does not match the expected schema: {e}") from e


def _report_table(title: str, report: EvalReport) -> Table:
    table = Table(title=title)
    for key in report.to_coco_json():
        table.add_column(key, justify="right")
    table.add_row(*(f"{v:.3f}" for v in report.to_coco_json().values()))
    return table


# ============================================
# Data Commands
# ============================================

@app.command()
@handle_errors
def synth(
    config: Optional[Path] = ConfigOption,
    overrides: list[str] = SetOption,
) -> None:
    """Generate a synthetic corpus as draft JSON plus PNG bitmaps."""
    run = _load(config, overrides)

    with console.status("Generating screens..."):
        samples, placements = generate_with_placements(run.synth)
        paths = dump_drafts(samples, placements, run.drafts_dir)
        write_placement_log(placements, run.output_dir / "placements.json")
    write_resolved_config(run, run.drafts_dir)

    console.print(Panel(
        f"screens={len(samples)} groups={count_logged_groups(placements)} "
        f"texts={sum(len(s.texts) for s in samples)} drafts={len(paths)}\n"
        f"[dim]{run.drafts_dir}[/dim]",
        title="Synthetic corpus",
    ))


@app.command(name="slice")
@handle_errors
def slice_command(
    config: Optional[Path] = ConfigOption,
    overrides: list[str] = SetOption,
) -> None:
    """Ingest drafts, split by package, slice into squares and write COCO splits."""
    run = _load(config, overrides)

    drafts = load_drafts(run.drafts_dir)
    if not drafts:
        raise DataError(f"no draft JSON files in {run.drafts_dir}")

    screens: list[ScreenSample] = []
    for draft in drafts:
        screens.extend(extract_screen_samples(draft, run.image_root, strict=run.data.strict_images))
    splits = split_corpus(screens, run.data.ratios, run.data.seed)

    table = Table(title="Dataset splits")
    for column in ("Split", "Screens", "Images", "Groups", "Texts", "Skipped"):
        table.add_column(column, justify="right" if column != "Split" else "left")

    totals = {"images": 0, "groups": 0, "texts": 0, "skipped": 0}
    for name, split in zip(SPLITS, splits, strict=True):
        skipped = 0
        if run.data.segment:
            slices, report = slice_corpus(split)
            manifest, images = build_manifest(slices)
            skipped = len(report.skipped)
        else:
            manifest, images = screens_as_manifest(split)
        write_coco(manifest, run.dataset_dir / name, images)

        counts = manifest_summary(manifest)
        for key, value in counts.items():
            totals[key] += value
        totals["skipped"] += skipped
        table.add_row(
            name, str(len(split)), str(counts["images"]), str(counts["groups"]),
            str(counts["texts"]), str(skipped),
        )

    write_resolved_config(run, run.dataset_dir)
    console.print(table)
    closed = str(is_package_closed(*splits)).lower()
    console.print(
        f"images={totals['images']} groups={totals['groups']} texts={totals['texts']} "
        f"skipped={totals['skipped']} package_closed={closed}",
        highlight=False,
        soft_wrap=True,
    )


# ============================================
# Model Commands
# ============================================

@app.command()
@handle_errors
def train(
    config: Optional[Path] = ConfigOption,
    overrides: list[str] = SetOption,
) -> None:
    """Train the detector; writes best.pt, last.pt and metrics.jsonl."""
    from groupdet.data.dataset import GroupDataset
    from groupdet.training.trainer import train as run_training

    run = _load(config, overrides)
    train_set = GroupDataset(run.dataset_dir / "train")
    val_dir = run.dataset_dir / "val"
    val_set = GroupDataset(val_dir) if val_dir.exists() else None

    write_resolved_config(run, run.train_dir)
    result = run_training(train_set, val_set, run.model, run.train_dir)

    table = Table(title="Training")
    for column in ("Epoch", "Loss", "LR", "AP", "AP50"):
        table.add_column(column, justify="right")
    for m in result.history:
        table.add_row(str(m.epoch), f"{m.loss:.4f}", f"{m.lr:g}", f"{m.ap:.3f}", f"{m.ap50:.3f}")
    console.print(table)
    console.print(Panel(
        f"[green]✓ best val AP {result.best_ap:.3f}[/green]\n{result.best_checkpoint}",
        title="Done",
    ))


@app.command(name="eval")
@handle_errors
def eval_command(
    config: Optional[Path] = ConfigOption,
    overrides: list[str] = SetOption,
    detections: Optional[Path] = typer.Option(
        None, "--detections", "-d", help='Precomputed detections {"<image_id>": [...]} instead of a checkpoint'
    ),
) -> None:
    """Evaluate a checkpoint (or a detections file) on a split; writes report.json."""
    from groupdet.data.coco import read_coco
    from groupdet.evaluation.cocoeval import evaluate

    run = _load(config, overrides)
    split_dir = run.dataset_dir / run.eval.split
    out_dir = run.output_dir / "eval" / run.eval.split

    if detections is not None:
        manifest = read_coco(split_dir)
        per_image = _parse(TypeAdapter(dict[int, list[Detection]]), _read_json(detections), detections)
        report = evaluate(manifest, per_image, max_dets=run.eval.max_dets)
    else:
        from groupdet.data.dataset import GroupDataset
        from groupdet.model.detector import load_checkpoint
        from groupdet.training.trainer import evaluate_model

        model = load_checkpoint(run.checkpoint_path, run.model)
        with console.status(f"Evaluating {run.eval.split}..."):
            report, per_image = evaluate_model(model, GroupDataset(split_dir), run.eval.max_dets)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "detections.json").write_text(
            json.dumps({str(k): [d.model_dump() for d in v] for k, v in per_image.items()}, indent=2),
            encoding="utf-8",
        )

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report.to_coco_json(), indent=2), encoding="utf-8")
    write_resolved_config(run, out_dir)
    console.print(_report_table(f"COCO evaluation ({run.eval.split})", report))


@app.command()
@handle_errors
def predict(
    image: Path = typer.Argument(..., help="Screen image (PNG/JPEG)"),
    texts: Optional[Path] = typer.Option(None, "--texts", "-t", help="JSON list of text records"),
    output: Optional[Path] = typer.Option(None, "--out", "-o", help="Detections JSON output"),
    config: Optional[Path] = ConfigOption,
    overrides: list[str] = SetOption,
) -> None:
    """Detect groups on one image; prints or writes detections JSON."""
    from groupdet.model.detector import load_checkpoint

    run = _load(config, overrides)
    text_records: list[TextLayerRecord] = []
    if texts is not None:
        text_records = _parse(TypeAdapter(list[TextLayerRecord]), _read_json(texts), texts)

    model = load_checkpoint(run.checkpoint_path, run.model)
    found = model.predict(load_image(image), text_records)
    payload = json.dumps([d.model_dump() for d in found], indent=2)

    if output is not None:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(payload, encoding="utf-8")
        write_resolved_config(run, output.parent)
        console.print(f"[green]✓ {len(found)} detections written to {output}[/green]")
    else:
        console.print_json(payload)


@app.command()
@handle_errors
def render(
    image: Path = typer.Argument(..., help="Screen image (PNG/JPEG)"),
    detections: Path = typer.Option(..., "--detections", "-d", help="Detections JSON list"),
    output: Path = typer.Option(..., "--out", "-o", help="Overlay PNG output"),
    min_score: float = typer.Option(0.5, "--min-score", help="Hide detections below this score"),
    config: Optional[Path] = ConfigOption,
    overrides: list[str] = SetOption,
) -> None:
    """Draw detection boxes with scores over an image."""
    from groupdet.interface.render import save_overlay

    run = _load(config, overrides)
    found = _parse(TypeAdapter(list[Detection]), _read_json(detections), detections)
    save_overlay(load_image(image), found, output, min_score=min_score)
    write_resolved_config(run, output.parent)
    console.print(f"[green]✓ Rendered {sum(d.score >= min_score for d in found)} boxes to {output}[/green]")


if __name__ == "__main__":
    app()
