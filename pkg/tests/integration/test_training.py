"""
Overfit run on a small synthetic corpus.

Slow: minutes on a laptop CPU. Run with `pytest -m slow`.
"""

from pathlib import Path

import pytest

from groupdet.core.config import load_run_config
from groupdet.data.coco import build_manifest, write_coco
from groupdet.data.dataset import GroupDataset
from groupdet.data.slicer import slice_corpus
from groupdet.data.synth import generate_corpus
from groupdet.model.detector import load_checkpoint
from groupdet.training.trainer import evaluate_model, train

DEFAULT_CONFIG = Path(__file__).parents[2] / "configs" / "default.yaml"

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def overfit_corpus(tmp_path_factory) -> GroupDataset:
    run = load_run_config(DEFAULT_CONFIG, ["synth.n_screens=16", "synth.seed=0"])
    slices, _ = slice_corpus(generate_corpus(run.synth))
    manifest, images = build_manifest(slices)
    return GroupDataset(write_coco(manifest, tmp_path_factory.mktemp("overfit") / "train", images))


@pytest.fixture(scope="module")
def overfit_run(overfit_corpus, tmp_path_factory):
    run = load_run_config(DEFAULT_CONFIG)
    out = tmp_path_factory.mktemp("run")
    return run.model, train(overfit_corpus, overfit_corpus, run.model, out)


class TestOverfit:
    """The tiny preset memorizes 16 screens within the iteration cap."""

    def test_train_set_ap50(self, overfit_run, overfit_corpus):
        config, result = overfit_run

        model = load_checkpoint(result.best_checkpoint, config)
        report, _ = evaluate_model(model, overfit_corpus)

        assert sum(len(losses) for losses in result.iteration_losses) <= 2000
        assert report.ap50 >= 0.8

    def test_loss_decreases(self, overfit_run):
        _, result = overfit_run

        early = result.median_loss(0, 1)
        late = result.median_loss(3, 4)

        assert late < early

    def test_epoch_zero_repeats(self, overfit_run, overfit_corpus, tmp_path):
        config, result = overfit_run

        rerun = train(overfit_corpus, None, config.model_copy(update={"epochs": 1}), tmp_path / "rerun")

        assert rerun.iteration_losses[0] == pytest.approx(result.iteration_losses[0], rel=1e-6)
