"""Supervised training of the segmentation network on weighted cross-entropy.

"Iterations" are epochs over the training slices; an epoch is
ceil(training pixels / pixels per batch) optimizer steps unless overridden.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pyvolseg.autodiff.losses import weighted_cross_entropy
from pyvolseg.autodiff.optim import OptimizerState, optimizer_step
from pyvolseg.autodiff.tensor import Tensor
from pyvolseg.converters.weight_maps import (
    binarize_labels,
    compute_weight_volume,
    normalize_weights,
)
from pyvolseg.errors import (
    BadConfig,
    DivergedLoss,
    InvariantViolation,
    NonFiniteError,
    ShapeMismatch,
)
from pyvolseg.metrics import ConfusionMatrix, confusion
from pyvolseg.models.io import TrainConfig
from pyvolseg.models.nets import PartialLoadReport, UNetConfig
from pyvolseg.models.shared import Volume3D, VolumeDType
from pyvolseg.networks.checkpoint import load_checkpoint_partial, save_checkpoint
from pyvolseg.networks.params import ModelParams, frozen
from pyvolseg.networks.unet import build_unet, unet_config_of, unet_forward
from pyvolseg.training.logs import MetricsLog
from pyvolseg.training.sampling import SliceSplit, jitter_batch, sample_batch, split_slices
from pyvolseg.volume_io import read_volume

LOGGER = logging.getLogger(__name__)


@dataclass
class TrainingData:
    images: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    num_classes: int
    split: SliceSplit


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    best_epoch: int
    history: list[dict[str, float | int]] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    report: PartialLoadReport | None = None


def unet_config(cfg: TrainConfig) -> UNetConfig:
    return UNetConfig(num_classes=cfg.classes, depth=cfg.depth, base_channels=cfg.base_channels)


def image_array(volume: Volume3D) -> np.ndarray:
    if volume.dtype is not VolumeDType.F32Scalar:
        raise InvariantViolation("Image volumes must hold F32Scalar intensities")
    return volume.data.astype(np.float32)


def target_array(labels: Volume3D, classes: int, boundary_class: int) -> np.ndarray:
    """Label volume as training targets; multi-class labels are binarized for a 2-class network."""
    if labels.dtype is not VolumeDType.U8Label:
        raise InvariantViolation("Label volumes must hold U8Label values")
    if classes == 2 and labels.num_classes > 2:
        return binarize_labels(labels.data, boundary_class)
    if labels.num_classes > classes:
        raise BadConfig(f"Labels have {labels.num_classes} classes, the network only {classes}")
    return labels.data.astype(np.uint8)


def load_training_data(cfg: TrainConfig) -> TrainingData:
    images = read_volume(cfg.images)
    labels = read_volume(cfg.labels)
    if images.dims != labels.dims:
        raise ShapeMismatch(f"Images {images.dims} and labels {labels.dims} differ in shape")

    if cfg.weights is not None:
        weight_volume = read_volume(cfg.weights)
        if weight_volume.dims != labels.dims:
            raise ShapeMismatch(f"Weights {weight_volume.dims} and labels {labels.dims} differ")
        weights = np.stack([normalize_weights(plane, cfg.floor) for plane in image_array(weight_volume)])
    else:
        weights = compute_weight_volume(
            labels,
            cfg.scheme,
            window=cfg.window,
            sigma=cfg.sigma,
            ratio=cfg.ratio,
            boundary_class=cfg.boundary_class,
            floor=cfg.floor,
        ).data

    return TrainingData(
        images=image_array(images),
        targets=target_array(labels, cfg.classes, cfg.boundary_class),
        weights=weights.astype(np.float32),
        num_classes=cfg.classes,
        split=split_slices(images.dims[0], cfg.val_frac),
    )


def predict_volume(params: ModelParams, images: np.ndarray) -> np.ndarray:
    """Arg-max labels of every slice; slices are edge-padded to the network's size multiple."""
    images = np.asarray(images, dtype=np.float32)
    z_dim, h, w = images.shape
    multiple = unet_config_of(params).size_multiple
    pad_h, pad_w = -h % multiple, -w % multiple
    padded = np.pad(images, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    predicted = np.empty((z_dim, h, w), dtype=np.uint8)
    with frozen(params):
        for z in range(z_dim):
            logits = unet_forward(params, Tensor(padded[z][None, None]))
            predicted[z] = np.argmax(logits.data[0], axis=0)[:h, :w]
    return predicted


def evaluate(
    params: ModelParams, images: np.ndarray, targets: np.ndarray, slices: tuple[int, ...], num_classes: int
) -> ConfusionMatrix:
    predicted = predict_volume(params, images[list(slices)])
    return confusion(predicted, targets[list(slices)], num_classes)


def steps_per_epoch(cfg: TrainConfig, data: TrainingData) -> int:
    if cfg.steps_per_epoch is not None:
        return cfg.steps_per_epoch
    _, h, w = data.images.shape
    return math.ceil(len(data.split.train) * h * w / (cfg.batch * cfg.crop * cfg.crop))


def train_step(params: ModelParams, state: OptimizerState, x: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    logits = unet_forward(params, Tensor(x))
    loss = weighted_cross_entropy(logits, y, w)
    loss.backward()
    optimizer_step(params, state)
    return loss.item()


def fit(
    params: ModelParams,
    data: TrainingData,
    cfg: TrainConfig,
    phases: list[tuple[int, bool]],
) -> TrainResult:
    """Run (epochs, jitter) phases back to back, logging and checkpointing after every epoch."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sample_seed, jitter_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    sample_rng = np.random.default_rng(sample_seed)
    jitter_rng = np.random.default_rng(jitter_seed)
    state = OptimizerState(kind=cfg.opt, lr=cfg.lr)
    steps = steps_per_epoch(cfg, data)

    validation = data.split.validation
    if not validation:
        LOGGER.warning("No validation slices held out, validating on the training slices")
        validation = data.split.train

    columns = ["epoch", "train_loss", "val_jaccard_mean"] + [
        f"val_jaccard_class_{c}" for c in range(data.num_classes)
    ]
    result = TrainResult(params=params, best_params=params.copy(), best_epoch=0)
    best_score = -math.inf
    LOGGER.info(
        f"Training on {len(data.split.train)} slices, validating on {len(validation)}, "
        f"{steps} steps per epoch"
    )

    with MetricsLog(out / "metrics.csv", columns) as log:
        epoch = 0
        for epochs, use_jitter in phases:
            for _ in range(epochs):
                epoch += 1
                epoch_losses = []
                for _ in range(steps):
                    batch = sample_batch(
                        data.images, data.targets, data.weights, cfg, sample_rng, data.split.train
                    )
                    x = jitter_batch(batch.images, jitter_rng) if use_jitter else batch.images
                    try:
                        loss = train_step(params, state, x, batch.labels, batch.weights)
                    except NonFiniteError as exc:
                        save_checkpoint(params, out / "diverged.unck")
                        raise DivergedLoss(
                            f"Loss diverged at epoch {epoch}, last finite state saved to diverged.unck"
                        ) from exc
                    epoch_losses.append(loss)
                    LOGGER.debug(f"epoch {epoch} step {len(epoch_losses)}: loss {loss:.6f}")
                result.step_losses.extend(epoch_losses)

                scores = evaluate(
                    params, data.images, data.targets, validation, data.num_classes
                ).per_class_jaccard()
                row: dict[str, float | int] = {
                    "epoch": epoch,
                    "train_loss": float(np.mean(epoch_losses)),
                    "val_jaccard_mean": float(scores.mean()),
                }
                row.update({f"val_jaccard_class_{c}": float(s) for c, s in enumerate(scores)})
                log.append(row)
                result.history.append(row)
                LOGGER.info(
                    f"Epoch {epoch}: loss {row['train_loss']:.4f}, "
                    f"validation mean Jaccard {row['val_jaccard_mean']:.4f}"
                )
                if row["val_jaccard_mean"] > best_score:
                    best_score = row["val_jaccard_mean"]
                    result.best_params = params.copy()
                    result.best_epoch = epoch

    save_checkpoint(result.best_params, out / "best.unck")
    save_checkpoint(params, out / "final.unck")
    return result


def train_supervised(cfg: TrainConfig, params: ModelParams | None = None) -> TrainResult:
    data = load_training_data(cfg)
    report = None
    if params is None:
        params = build_unet(unet_config(cfg), seed=cfg.seed)
        if cfg.base_checkpoint is not None:
            params, report = load_checkpoint_partial(cfg.base_checkpoint, params)
    result = fit(params, data, cfg, [(cfg.iters, cfg.jitter)])
    result.report = report
    return result


def finetune_binary(base_checkpoint: Path | None, cfg: TrainConfig) -> TrainResult:
    """Binary training from a pretrained network whose classification head is reinitialized.

    With jitter on, a phase of cfg.jitter_epochs jittered epochs follows the
    plain ones.
    """
    if cfg.classes != 2:
        raise BadConfig(f"Binary fine-tuning needs classes=2, got {cfg.classes}")
    fresh = build_unet(unet_config(cfg), seed=cfg.seed)
    report = None
    if base_checkpoint is not None:
        params, report = load_checkpoint_partial(base_checkpoint, fresh)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "partial_load.txt").write_text(report.to_string())
    else:
        params = fresh
    data = load_training_data(cfg)
    phases = [(cfg.iters, False)]
    if cfg.jitter:
        phases.append((cfg.jitter_epochs, True))
    result = fit(params, data, cfg, phases)
    result.report = report
    return result
