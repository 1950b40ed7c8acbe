import argparse
import csv
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from pydantic import BaseModel, ValidationError

from pyvolseg.autodiff.gradcheck import PASS_THRESHOLD, check_all
from pyvolseg.converters.synth import generate
from pyvolseg.converters.weight_maps import WeightScheme, compute_weight_volume
from pyvolseg.errors import BadConfig, VolSegError
from pyvolseg.metrics import confusion
from pyvolseg.models.io import (
    AdaptConfig,
    CommandArgs,
    EvalConfig,
    GradCheckConfig,
    OptimizerKind,
    PredictConfig,
    RunManifest,
    SynthConfig,
    TrainConfig,
    WeightsConfig,
    read_key_values,
)
from pyvolseg.models.shared import Slice2D, Volume3D
from pyvolseg.networks.checkpoint import load_checkpoint
from pyvolseg.networks.unet import unet_config_of
from pyvolseg.training.adversarial import adapt_adversarial
from pyvolseg.training.supervised import (
    finetune_binary,
    image_array,
    predict_volume,
    target_array,
    train_supervised,
)
from pyvolseg.volume_io import export_pgm, read_volume, write_volume

LOGGER = logging.getLogger(__name__)


class _UsageParser(argparse.ArgumentParser):
    """Argument parser that exits with status 1 on usage errors."""

    def error(self, message: str):  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _on_off(value: str) -> bool:
    lowered = value.lower()
    if lowered not in ("on", "off"):
        raise argparse.ArgumentTypeError("Value must be 'on' or 'off'")
    return lowered == "on"


def _add_out(parser: argparse.ArgumentParser, help: str = "Output directory") -> None:
    parser.add_argument("--out", type=Path, default=None, help=help)


def _add_weight_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--scheme",
        choices=[s.value for s in WeightScheme],
        default=None,
        help="Loss weighting scheme",
    )
    parser.add_argument("--ratio", type=float, default=None, help="Boundary:rest weight of the ratio scheme")
    parser.add_argument("--window", type=int, default=None, help="Odd entropy window size")
    parser.add_argument("--sigma", type=float, default=None, help="Gaussian sigma of the distance scheme")
    parser.add_argument("--boundary-class", type=int, default=None, help="Label of the cell boundary class")


def _add_crop_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--crop", type=int, default=None, help="Square crop size")
    parser.add_argument("--batch", type=int, default=None, help="Crops per optimizer step")
    parser.add_argument("--opt", choices=[o.value for o in OptimizerKind], default=None, help="Optimizer")
    parser.add_argument("--jitter", type=_on_off, default=None, metavar="{on,off}", help="Random photometric jitter")
    parser.add_argument("--val-frac", type=float, default=None, help="Fraction of trailing slices held out")


def _add_training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--images", type=Path, default=None, help="F32 image volume")
    parser.add_argument("--labels", type=Path, default=None, help="U8 label volume")
    parser.add_argument("--weights", type=Path, default=None, help="Precomputed F32 weight volume")
    parser.add_argument("--base-checkpoint", type=Path, default=None, help="Pretrained network")
    parser.add_argument("--classes", type=int, default=None, help="Number of output classes")
    parser.add_argument("--iters", type=int, default=None, help="Training epochs")
    parser.add_argument("--lr", type=float, default=None, help="Learning rate")
    parser.add_argument("--depth", type=int, default=None, help="UNet levels")
    parser.add_argument("--base", dest="base_channels", type=int, default=None, help="Channels of the first level")
    parser.add_argument("--steps-per-epoch", type=int, default=None, help="Override the steps per epoch")
    _add_crop_flags(parser)
    _add_weight_flags(parser)
    _add_out(parser)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _UsageParser(
        prog="pyvolseg",
        description="Weighted and adversarially adapted segmentation of EM volumes",
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    subparsers: dict[str, argparse.ArgumentParser] = {}

    def command(name: str, help: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help, description=help)
        sub.add_argument(
            "--config",
            type=Path,
            default=None,
            help="key=value file, e.g. a previous manifest.txt; flags override its values",
        )
        sub.add_argument("--seed", type=int, default=None, help="Random seed (default 42)")
        subparsers[name] = sub
        return sub

    synth = command("make-synth", "Generate paired synthetic image and label volumes")
    _add_out(synth)
    synth.add_argument("--slices", type=int, default=None, help="Number of slices")
    synth.add_argument("--size", type=int, default=None, help="Square slice size")
    synth.add_argument("--cells", dest="seeds_per_slice", type=int, default=None, help="Seed points per slice")
    synth.add_argument("--thickness", type=float, default=None, help="Boundary thickness in pixels")
    synth.add_argument("--classes", type=int, choices=[2, 4], default=None, help="Binary or four-class labels")
    synth.add_argument("--style", choices=["source", "target"], default=None, help="Photometric domain")
    synth.add_argument("--noise", dest="noise_sigma", type=float, default=None, help="Gaussian noise sigma")

    weights = command("gen-weights", "Compute raw loss-weight maps of a label volume")
    weights.add_argument("--labels", type=Path, default=None, help="U8 label volume")
    _add_weight_flags(weights)
    _add_out(weights)

    _add_training_flags(command("train", "Supervised training with weighted cross-entropy"))
    finetune = command("finetune", "Binary fine-tuning from a pretrained network")
    _add_training_flags(finetune)
    finetune.add_argument("--epochs", dest="jitter_epochs", type=int, default=None, help="Length of the jitter phase")

    adapt = command("adapt", "Adversarial adaptation to unlabeled target images")
    adapt.add_argument("--images", type=Path, default=None, help="Source image volume")
    adapt.add_argument("--labels", type=Path, default=None, help="Source label volume")
    adapt.add_argument("--target-images", type=Path, default=None, help="Target image volume")
    adapt.add_argument("--base-checkpoint", type=Path, default=None, help="Pretrained binary network")
    adapt.add_argument("--iters", dest="steps_per_epoch", type=int, default=None, help="Steps per epoch")
    adapt.add_argument("--epochs", type=int, default=None, help="Adaptation epochs")
    adapt.add_argument("--lr", type=float, default=None, help="Discriminator and generator learning rate")
    adapt.add_argument("--d-steps", type=int, default=None, help="Discriminator updates per step")
    adapt.add_argument("--g-steps", type=int, default=None, help="Generator updates per step")
    adapt.add_argument("--disc-slope", type=float, default=None, help="LeakyReLU slope of the discriminator")
    adapt.add_argument("--boundary-class", type=int, default=None, help="Label of the cell boundary class")
    _add_crop_flags(adapt)
    _add_out(adapt)

    predict = command("predict", "Label a volume with a trained network")
    predict.add_argument("--images", type=Path, default=None, help="F32 image volume")
    predict.add_argument("--base-checkpoint", type=Path, default=None, help="Trained network")
    _add_out(predict)

    evaluate = command("eval", "Per-slice and aggregate Jaccard scores of a trained network")
    evaluate.add_argument("--images", type=Path, default=None, help="F32 image volume")
    evaluate.add_argument("--labels", type=Path, default=None, help="U8 label volume")
    evaluate.add_argument("--base-checkpoint", type=Path, default=None, help="Trained network")
    evaluate.add_argument("--boundary-class", type=int, default=None, help="Label of the cell boundary class")
    _add_out(evaluate)

    grad = command("grad-check", "Compare analytic gradients with finite differences")
    _add_out(grad, help="Directory for grad_check.csv and the manifest (default: current directory)")

    return parser, subparsers


def parse_args(parser: argparse.ArgumentParser, argv: Sequence[str] | None) -> CommandArgs:
    args = parser.parse_args(argv)
    overrides: dict[str, Any] = {
        key: value
        for key, value in vars(args).items()
        if key not in ("command", "config") and value is not None
    }
    return CommandArgs(command=args.command, config_path=args.config, overrides=overrides)


@dataclass
class _Command:
    model: type[BaseModel]
    required: tuple[str, ...]
    handler: Callable[[Any, dict[str, Any]], int]
    prepare: Callable[[dict[str, Any]], dict[str, Any]] | None = None
    """Turns merged values into model fields; returns the manifest extras."""


def _prepare_synth(values: dict[str, Any]) -> dict[str, Any]:
    extras = {"out": values.pop("out", None)}
    slices, size = values.pop("slices", None), values.pop("size", None)
    if slices is not None or size is not None:
        dims = SynthConfig.model_validate({"dims": values.get("dims", (16, 64, 64))}).dims
        values["dims"] = (
            slices if slices is not None else dims[0],
            size if size is not None else dims[1],
            size if size is not None else dims[2],
        )
    classes = values.pop("classes", None)
    if classes is not None:
        if int(classes) not in (2, 4):
            raise BadConfig(f"Synthetic labels have 2 or 4 classes, got {classes}")
        values["class_mode"] = "four_class" if int(classes) == 4 else "binary"
    return extras


def _prepare_finetune(values: dict[str, Any]) -> dict[str, Any]:
    values.setdefault("scheme", WeightScheme.distance.value)
    values.setdefault("classes", 2)
    return {}


def _prepare_adapt(values: dict[str, Any]) -> dict[str, Any]:
    lr = values.pop("lr", None)
    if lr is not None:
        values["disc_lr"] = values["gen_lr"] = lr
    return {}


def _make_synth(cfg: SynthConfig, extras: dict[str, Any]) -> int:
    out = Path(extras["out"])
    out.mkdir(parents=True, exist_ok=True)
    images, labels = generate(cfg)
    write_volume(images, out / "images.vseg")
    write_volume(labels, out / "labels.vseg")
    return 0


def _gen_weights(cfg: WeightsConfig, extras: dict[str, Any]) -> int:
    labels = read_volume(cfg.labels)
    weights = compute_weight_volume(
        labels,
        cfg.scheme,
        window=cfg.window,
        sigma=cfg.sigma,
        ratio=cfg.ratio,
        boundary_class=cfg.boundary_class,
        normalize=False,
    )
    write_volume(weights, Path(cfg.out) / "weights.vseg")
    return 0


def _train(cfg: TrainConfig, extras: dict[str, Any]) -> int:
    result = train_supervised(cfg)
    LOGGER.info(f"Best validation epoch {result.best_epoch}, checkpoints in {cfg.out}")
    return 0


def _finetune(cfg: TrainConfig, extras: dict[str, Any]) -> int:
    result = finetune_binary(cfg.base_checkpoint, cfg)
    LOGGER.info(f"Best validation epoch {result.best_epoch}, checkpoints in {cfg.out}")
    return 0


def _adapt(cfg: AdaptConfig, extras: dict[str, Any]) -> int:
    adapt_adversarial(cfg)
    return 0


def _predict(cfg: PredictConfig, extras: dict[str, Any]) -> int:
    params = load_checkpoint(cfg.base_checkpoint)
    num_classes = unet_config_of(params).num_classes
    predicted = predict_volume(params, image_array(read_volume(cfg.images)))
    out = Path(cfg.out)
    planes = [Slice2D.labels(plane, num_classes) for plane in predicted]
    write_volume(Volume3D.from_slices(planes), out / "predicted_labels.vseg")
    for z, plane in enumerate(planes):
        export_pgm(Slice2D.scalars(plane.data.astype("float32")), out / f"pred_z{z:03d}.pgm")
    return 0


def _eval(cfg: EvalConfig, extras: dict[str, Any]) -> int:
    params = load_checkpoint(cfg.base_checkpoint)
    num_classes = unet_config_of(params).num_classes
    targets = target_array(read_volume(cfg.labels), num_classes, cfg.boundary_class)
    predicted = predict_volume(params, image_array(read_volume(cfg.images)))
    boundary = cfg.boundary_class if num_classes > 2 else 1

    columns = ["slice", "jaccard_mean"] + [f"jaccard_class_{c}" for c in range(num_classes)]
    per_slice = [confusion(p, t, num_classes) for p, t in zip(predicted, targets)]
    total = sum(per_slice[1:], per_slice[0])
    path = Path(cfg.out) / "eval.csv"
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for name, matrix in [*enumerate(per_slice), ("all", total)]:
            scores = matrix.per_class_jaccard()
            row: dict[str, Any] = {"slice": name, "jaccard_mean": repr(float(scores.mean()))}
            row.update({f"jaccard_class_{c}": repr(float(s)) for c, s in enumerate(scores)})
            writer.writerow(row)
    LOGGER.info(
        f"Mean Jaccard {total.mean_jaccard():.4f}, "
        f"boundary Jaccard {total.per_class_jaccard()[boundary]:.4f}; written to {path}"
    )
    return 0


def _grad_check(cfg: GradCheckConfig, extras: dict[str, Any]) -> int:
    results = check_all(cfg.seed)
    for family, error in results.items():
        print(f"{family} {error:.3e}")
    with (Path(cfg.out) / "grad_check.csv").open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["family", "max_rel_error"])
        writer.writerows([family, repr(error)] for family, error in results.items())
    failed = [family for family, error in results.items() if not error < PASS_THRESHOLD]
    if failed:
        LOGGER.error(f"Gradient check failed for {', '.join(failed)}")
        return 2
    return 0


COMMANDS: dict[str, _Command] = {
    "make-synth": _Command(SynthConfig, ("out",), _make_synth, _prepare_synth),
    "gen-weights": _Command(WeightsConfig, ("labels", "out"), _gen_weights),
    "train": _Command(TrainConfig, ("images", "labels", "out"), _train),
    "finetune": _Command(TrainConfig, ("images", "labels", "out"), _finetune, _prepare_finetune),
    "adapt": _Command(
        AdaptConfig,
        ("images", "labels", "target_images", "base_checkpoint", "out"),
        _adapt,
        _prepare_adapt,
    ),
    "predict": _Command(PredictConfig, ("images", "base_checkpoint", "out"), _predict),
    "eval": _Command(EvalConfig, ("images", "labels", "base_checkpoint", "out"), _eval),
    "grad-check": _Command(GradCheckConfig, (), _grad_check),
}


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand; 0 on success, 1 on usage errors, 2 on runtime failures."""
    parser, subparsers = build_parser()
    try:
        args = parse_args(parser, argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    command = COMMANDS[args.command]

    try:
        values: dict[str, Any] = {}
        if args.config_path is not None:
            values.update(read_key_values(args.config_path))
            values.pop("command", None)
        values.update(args.overrides)

        missing = [key for key in command.required if values.get(key) is None]
        if missing:
            flags = ", ".join("--" + key.replace("_", "-") for key in missing)
            try:
                subparsers[args.command].error(f"the following arguments are required: {flags}")
            except SystemExit as exc:
                return exc.code if isinstance(exc.code, int) else 1

        extras = command.prepare(values) if command.prepare else {}
        config = command.model.model_validate(values)
        out = extras.get("out") or getattr(config, "out", None)
        if out is not None:
            RunManifest(args.command, config, extras).write(Path(out))
        LOGGER.info(f"Running {args.command} with {config.model_dump_json()}")
        return command.handler(config, extras)
    except ValidationError as exc:
        LOGGER.error(f"Invalid {args.command} configuration: {exc}")
        return 2
    except (VolSegError, OSError) as exc:
        LOGGER.error(f"{args.command} failed: {exc}")
        return 2


def run() -> None:
    logging.basicConfig(level=logging.INFO)
    sys.exit(main())
