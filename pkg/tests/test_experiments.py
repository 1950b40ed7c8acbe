"""End-to-end training runs on synthetic cells; deselected by default, run with ``pytest -m slow``."""

from pathlib import Path

import numpy as np
import pytest

from conftest import write_synth
from pyvolseg.metrics import foreground_jaccard
from pyvolseg.models.io import AdaptConfig, TrainConfig
from pyvolseg.training.adversarial import adapt_adversarial
from pyvolseg.training.supervised import finetune_binary, predict_volume
from pyvolseg.volume_io import read_volume

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)
FIXED_RATIOS = (2.0, 5.0, 10.0)
SMALL_NET = dict(depth=3, base_channels=8, crop=32, batch=2)


def boundary_jaccard(params, images: Path, labels: Path) -> float:
    predicted = predict_volume(params, read_volume(images).data)
    return foreground_jaccard(predicted, read_volume(labels).data)


def test_binary_network_overfits_synthetic_boundaries(tmp_path: Path):
    images, labels = write_synth(
        tmp_path / "synth", dims=(4, 64, 64), class_mode="binary", thickness=2.0, seed=0
    )
    cfg = TrainConfig(
        images=images,
        labels=labels,
        out=tmp_path / "run",
        classes=2,
        scheme="distance",
        depth=3,
        base_channels=16,
        crop=64,
        batch=2,
        iters=250,
        lr=1e-4,
        val_frac=0.0,
        seed=0,
    )
    result = finetune_binary(None, cfg)
    assert len(result.step_losses) == 500
    assert boundary_jaccard(result.params, images, labels) >= 0.95


def test_distance_weights_match_or_beat_fixed_ratios(tmp_path: Path):
    images, labels = write_synth(tmp_path / "synth", dims=(16, 64, 64), class_mode="binary", seed=0)
    schemes = {"distance": dict(scheme="distance")}
    schemes.update({f"ratio {r:g}:1": dict(scheme="ratio", ratio=r) for r in FIXED_RATIOS})

    medians = {}
    for name, flags in schemes.items():
        scores = []
        for seed in SEEDS:
            cfg = TrainConfig(
                images=images,
                labels=labels,
                out=tmp_path / f"{name.replace(' ', '_').replace(':', '-')}_{seed}",
                classes=2,
                iters=30,
                steps_per_epoch=50,
                lr=1e-4,
                val_frac=0.25,
                seed=seed,
                **SMALL_NET,
                **flags,
            )
            scores.append(finetune_binary(None, cfg).history[-1]["val_jaccard_class_1"])
        medians[name] = float(np.median(scores))

    for r in FIXED_RATIOS:
        assert medians["distance"] >= medians[f"ratio {r:g}:1"] - 0.02, medians


def test_adaptation_keeps_target_quality(tmp_path: Path):
    baseline, adapted, disc_accuracy = [], [], []
    for seed in SEEDS:
        source_images, source_labels = write_synth(
            tmp_path / f"source_{seed}", dims=(16, 64, 64), class_mode="binary", seed=seed
        )
        target_images, target_labels = write_synth(
            tmp_path / f"target_{seed}", dims=(16, 64, 64), class_mode="binary", seed=seed, style="target"
        )
        jittered = TrainConfig(
            images=source_images,
            labels=source_labels,
            out=tmp_path / f"jittered_{seed}",
            classes=2,
            scheme="distance",
            iters=15,
            steps_per_epoch=40,
            jitter=True,
            jitter_epochs=5,
            lr=1e-4,
            seed=seed,
            **SMALL_NET,
        )
        initial = finetune_binary(None, jittered)
        baseline.append(boundary_jaccard(initial.best_params, target_images, target_labels))

        result = adapt_adversarial(
            AdaptConfig(
                images=source_images,
                labels=source_labels,
                target_images=target_images,
                base_checkpoint=tmp_path / f"jittered_{seed}" / "best.unck",
                out=tmp_path / f"adapted_{seed}",
                epochs=5,
                crop=32,
                seed=seed,
            )
        )
        adapted.append(boundary_jaccard(result.params, target_images, target_labels))
        disc_accuracy.append(result.history[-1]["d_probe_acc"])

    assert 0.4 <= np.median(disc_accuracy) <= 0.7
    assert np.median(adapted) >= np.median(baseline) - 0.02
