import argparse
import csv
import logging
import time
from pathlib import Path

import numpy as np

from pyvolseg.cli import main as run_command

logging.basicConfig(level=logging.INFO)
LOGGER = logging.getLogger(__name__)

NET = ["--depth", "3", "--base", "8", "--crop", "64", "--batch", "2", "--lr", "0.0001"]
FIXED_RATIOS = (2, 5, 10)


def command(*argv: str) -> None:
    code = run_command([str(a) for a in argv])
    if code != 0:
        LOGGER.fatal(f"{argv[0]} exited with status {code}")
        exit(code)


def last_row(path: Path) -> dict[str, str]:
    with path.open() as f:
        return list(csv.DictReader(f))[-1]


def eval_boundary(out: Path, images: Path, labels: Path, checkpoint: Path) -> float:
    command("eval", "--images", images, "--labels", labels, "--base-checkpoint", checkpoint, "--out", out)
    return float(last_row(out / "eval.csv")["jaccard_class_1"])


def main(work: Path, seeds: list[int], iters: int, jitter_epochs: int, adapt_epochs: int):
    source, target = work / "source", work / "target"
    command("make-synth", "--out", source, "--slices", 16, "--size", 64, "--cells", 8)
    command("make-synth", "--out", target, "--slices", 16, "--size", 64, "--cells", 8, "--style", "target")
    images, labels = source / "images.vseg", source / "labels.vseg"

    # multi-class pretraining with entropy weights
    start = time.time_ns()
    pretrained = work / "pretrain"
    command("train", "--images", images, "--labels", labels, "--classes", 4, "--scheme", "entropy",
            "--iters", iters, "--out", pretrained, *NET)
    LOGGER.info(
        f"Pretraining: validation mean Jaccard "
        f"{float(last_row(pretrained / 'metrics.csv')['val_jaccard_mean']):.3f} "
        f"after {(time.time_ns() - start) / 1e9:.1f} s"
    )

    # binary fine-tuning, distance transform against fixed ratios
    schemes = {"distance": ["--scheme", "distance"]}
    schemes.update({f"ratio {r}:1": ["--scheme", "ratio", "--ratio", r] for r in FIXED_RATIOS})
    scores: dict[str, list[float]] = {name: [] for name in schemes}
    for seed in seeds:
        for name, flags in schemes.items():
            out = work / f"finetune_{name.replace(' ', '_').replace(':', '-')}_{seed}"
            command("finetune", "--images", images, "--labels", labels, "--base-checkpoint",
                    pretrained / "best.unck", "--iters", iters, "--seed", seed, "--out", out, *NET, *flags)
            scores[name].append(float(last_row(out / "metrics.csv")["val_jaccard_class_1"]))

    # the same distance-weighted binary training without multi-class pretraining
    scores["no pretraining"] = []
    for seed in seeds:
        out = work / f"binary_only_{seed}"
        command("finetune", "--images", images, "--labels", labels, "--iters", iters, "--seed", seed,
                "--out", out, *NET)
        scores["no pretraining"].append(float(last_row(out / "metrics.csv")["val_jaccard_class_1"]))
    LOGGER.info("Validation boundary Jaccard (median over seeds):")
    for name, values in scores.items():
        LOGGER.info(f"  {name:>14}: {np.median(values):.3f}")

    # harden the distance-weighted network with a jittered phase, then adapt it to the target style
    baseline, adapted = [], []
    for seed in seeds:
        finetuned = work / f"jittered_{seed}" / "best.unck"
        command("finetune", "--images", images, "--labels", labels, "--base-checkpoint",
                work / f"finetune_distance_{seed}" / "best.unck", "--iters", 0, "--jitter", "on",
                "--epochs", jitter_epochs, "--seed", seed, "--out", finetuned.parent, *NET)
        baseline.append(eval_boundary(work / f"baseline_{seed}", target / "images.vseg",
                                      target / "labels.vseg", finetuned))
        out = work / f"adapt_{seed}"
        command("adapt", "--images", images, "--labels", labels, "--target-images", target / "images.vseg",
                "--base-checkpoint", finetuned, "--epochs", adapt_epochs, "--seed", seed, "--crop", 64,
                "--out", out)
        LOGGER.info(f"Seed {seed}: final probe accuracy {last_row(out / 'metrics.csv')['d_probe_acc']}")
        adapted.append(eval_boundary(work / f"adapted_eval_{seed}", target / "images.vseg",
                                     target / "labels.vseg", out / "adapted.unck"))
    LOGGER.info(
        f"Target boundary Jaccard: unadapted {np.median(baseline):.3f}, adapted {np.median(adapted):.3f}"
    )


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Weight-scheme and adaptation experiments on synthetic cells")
    parser.add_argument("--out", type=Path, default=Path("demo_runs"), help="Working directory")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2], help="Fine-tuning seeds")
    parser.add_argument("--iters", type=int, default=20, help="Training epochs per run")
    parser.add_argument("--jitter-epochs", type=int, default=10, help="Jittered fine-tuning epochs")
    parser.add_argument("--adapt-epochs", type=int, default=5, help="Adaptation epochs")
    args = parser.parse_args()
    main(args.out, args.seeds, args.iters, args.jitter_epochs, args.adapt_epochs)
