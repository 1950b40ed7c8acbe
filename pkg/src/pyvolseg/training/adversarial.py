"""Unsupervised adaptation of a binary segmentation network to an unlabeled target domain.

A discriminator learns to tell smoothed one-hot source label maps from the
softmax output of the segmentation network on target images; the network is
then updated to fool it. The supervised loss is never used here. The
generator minimizes bce(D(S(x_target)), real), the non-saturating form of
maximizing the discriminator's loss on generated maps.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pyvolseg.autodiff.losses import bce_with_logits
from pyvolseg.autodiff.ops import softmax_channels
from pyvolseg.autodiff.optim import OptimizerState, optimizer_step
from pyvolseg.autodiff.tensor import Tensor
from pyvolseg.converters.weight_maps import binarize_labels
from pyvolseg.errors import BadConfig, DivergedLoss, NonFiniteError, ShapeMismatch
from pyvolseg.metrics import foreground_jaccard
from pyvolseg.models.io import AdaptConfig
from pyvolseg.models.nets import DiscConfig
from pyvolseg.models.shared import Slice2D, VolumeDType
from pyvolseg.networks.checkpoint import load_checkpoint, save_checkpoint
from pyvolseg.networks.discriminator import build_discriminator, disc_forward
from pyvolseg.networks.params import ModelParams, frozen
from pyvolseg.networks.unet import unet_config_of, unet_forward
from pyvolseg.training.logs import MetricsLog
from pyvolseg.training.sampling import Batch, jitter_batch, sample_batch, split_slices
from pyvolseg.training.supervised import image_array, predict_volume
from pyvolseg.volume_io import export_pgm, read_volume

LOGGER = logging.getLogger(__name__)

REAL_LABEL_CONFIDENCE = 0.95

COLUMNS = ["epoch", "d_loss_real", "d_loss_fake", "g_loss", "d_probe_acc", "tgt_jaccard_boundary"]


@dataclass
class AdaptResult:
    params: ModelParams
    discriminator: ModelParams
    history: list[dict[str, float | int]] = field(default_factory=list)
    first_d_losses: tuple[float, float] | None = None


def smoothed_one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """(N, C, H, W) maps with 0.95 on the true class and the rest spread evenly."""
    off = (1.0 - REAL_LABEL_CONFIDENCE) / (num_classes - 1)
    maps = np.full((labels.shape[0], num_classes, *labels.shape[1:]), off, dtype=np.float32)
    np.put_along_axis(maps, labels[:, None].astype(np.int64), REAL_LABEL_CONFIDENCE, axis=1)
    return maps


def companion_labels_path(target_images: Path) -> Path | None:
    """Label volume stored next to the target images, by swapping "images" for "labels" in the name."""
    target_images = Path(target_images)
    if "images" not in target_images.name:
        return None
    return target_images.with_name(target_images.name.replace("images", "labels"))


class TargetEvaluator:
    """Reporting-only boundary Jaccard on the target domain, -1 when no labels exist on disk."""

    def __init__(self, target_images: Path, boundary_class: int):
        self.boundary_class = boundary_class
        self.labels: np.ndarray | None = None
        path = companion_labels_path(target_images)
        if path is not None and path.is_file():
            volume = read_volume(path)
            if volume.dtype is VolumeDType.U8Label:
                self.labels = binarize_labels(volume.data, boundary_class)
                LOGGER.info(f"Reporting target Jaccard against {path}")
        if self.labels is None:
            LOGGER.warning("No target labels found, target Jaccard is reported as -1")

    def score(self, predicted: np.ndarray) -> float:
        if self.labels is None:
            return -1.0
        if self.labels.shape != predicted.shape:
            raise ShapeMismatch("Target labels and predictions differ in shape")
        return foreground_jaccard(predicted, self.labels, 1)


def probe_accuracy(
    disc: ModelParams, real_maps: np.ndarray, fake_maps: np.ndarray, slope: float = 0.2
) -> float:
    """Fraction of probe maps the discriminator classifies correctly at logit 0."""
    with frozen(disc):
        real = disc_forward(disc, Tensor(real_maps), slope).data.reshape(-1)
        fake = disc_forward(disc, Tensor(fake_maps), slope).data.reshape(-1)
    correct = int((real > 0).sum()) + int((fake <= 0).sum())
    return correct / (real.size + fake.size)


@dataclass
class _ProbeSettings:
    crop: int
    batch: int


def segmentation_maps(seg: ModelParams, images: np.ndarray) -> np.ndarray:
    with frozen(seg):
        return softmax_channels(unet_forward(seg, Tensor(images))).data


def adapt_adversarial(cfg: AdaptConfig) -> AdaptResult:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    seg = load_checkpoint(cfg.base_checkpoint)
    num_classes = unet_config_of(seg).num_classes
    if num_classes != 2:
        raise BadConfig(f"Adaptation expects a binary network, checkpoint has {num_classes} classes")
    multiple = unet_config_of(seg).size_multiple
    if cfg.crop % multiple:
        raise BadConfig(f"Crop {cfg.crop} is not divisible by {multiple}")
    disc_cfg = DiscConfig(in_channels=num_classes, slope=cfg.disc_slope)
    disc = build_discriminator(disc_cfg, seed=cfg.seed)

    source_images = image_array(read_volume(cfg.images))
    source_labels = read_volume(cfg.labels)
    if source_labels.dims != source_images.shape:
        raise ShapeMismatch("Source images and labels differ in shape")
    labels = source_labels.data
    if source_labels.num_classes > 2:
        labels = binarize_labels(labels, cfg.boundary_class)
    target_images = image_array(read_volume(cfg.target_images))
    evaluator = TargetEvaluator(cfg.target_images, cfg.boundary_class)

    source_split = split_slices(source_images.shape[0], cfg.val_frac)
    target_split = split_slices(target_images.shape[0], cfg.val_frac)
    probe_source = source_split.validation or source_split.train
    probe_target = target_split.validation or target_split.train

    sample_seed, jitter_seed, probe_seed = np.random.SeedSequence(cfg.seed).spawn(3)
    sample_rng = np.random.default_rng(sample_seed)
    jitter_rng = np.random.default_rng(jitter_seed)
    probe_rng = np.random.default_rng(probe_seed)

    probe_settings = _ProbeSettings(crop=cfg.crop, batch=cfg.probe_crops)
    probe_real = smoothed_one_hot(
        sample_batch(source_images, labels, None, probe_settings, probe_rng, probe_source).labels,
        num_classes,
    )
    probe_images = sample_batch(target_images, None, None, probe_settings, probe_rng, probe_target).images

    d_state = OptimizerState(kind=cfg.opt, lr=cfg.disc_lr)
    g_state = OptimizerState(kind=cfg.opt, lr=cfg.gen_lr)
    result = AdaptResult(params=seg, discriminator=disc)
    export_slices = sorted({0, target_images.shape[0] // 2})
    LOGGER.info(
        "Generator objective: non-saturating bce(D(softmax(S(x_target))), real); "
        "supervised loss unused"
    )

    with MetricsLog(out / "metrics.csv", COLUMNS) as log:
        for epoch in range(1, cfg.epochs + 1):
            real_losses, fake_losses, g_losses = [], [], []
            for _ in range(cfg.steps_per_epoch):
                try:
                    for _ in range(cfg.d_steps):
                        source = sample_batch(
                            source_images, labels, None, cfg, sample_rng, source_split.train
                        )
                        target = _target_batch(target_images, cfg, sample_rng, jitter_rng, target_split.train)
                        real, fake = _discriminator_step(seg, disc, d_state, source, target, disc_cfg)
                        real_losses.append(real)
                        fake_losses.append(fake)
                        if result.first_d_losses is None:
                            result.first_d_losses = (real, fake)
                    for _ in range(cfg.g_steps):
                        target = _target_batch(target_images, cfg, sample_rng, jitter_rng, target_split.train)
                        g_losses.append(_generator_step(seg, disc, g_state, target, disc_cfg.slope))
                except NonFiniteError as exc:
                    save_checkpoint(seg, out / "diverged.unck")
                    raise DivergedLoss(f"Adversarial losses diverged at epoch {epoch}") from exc

            fake_probe = segmentation_maps(seg, probe_images)
            predicted = predict_volume(seg, target_images)
            row: dict[str, float | int] = {
                "epoch": epoch,
                "d_loss_real": float(np.mean(real_losses)),
                "d_loss_fake": float(np.mean(fake_losses)),
                "g_loss": float(np.mean(g_losses)),
                "d_probe_acc": probe_accuracy(disc, probe_real, fake_probe, disc_cfg.slope),
                "tgt_jaccard_boundary": evaluator.score(predicted),
            }
            log.append(row)
            result.history.append(row)
            for z in export_slices:
                export_pgm(
                    Slice2D.scalars(predicted[z].astype(np.float32)),
                    out / f"epoch_{epoch:03d}_target_z{z:03d}.pgm",
                )
            LOGGER.info(
                f"Epoch {epoch}: D real {row['d_loss_real']:.4f}, D fake {row['d_loss_fake']:.4f}, "
                f"G {row['g_loss']:.4f}, probe accuracy {row['d_probe_acc']:.3f}, "
                f"target Jaccard {row['tgt_jaccard_boundary']:.4f}"
            )

    save_checkpoint(seg, out / "adapted.unck")
    save_checkpoint(disc, out / "discriminator.unck")
    return result


def _target_batch(
    images: np.ndarray,
    cfg: AdaptConfig,
    sample_rng: np.random.Generator,
    jitter_rng: np.random.Generator,
    slices: tuple[int, ...],
) -> np.ndarray:
    batch = sample_batch(images, None, None, cfg, sample_rng, slices).images
    return jitter_batch(batch, jitter_rng) if cfg.jitter else batch


def _discriminator_step(
    seg: ModelParams,
    disc: ModelParams,
    state: OptimizerState,
    source: Batch,
    target_images: np.ndarray,
    disc_cfg: DiscConfig,
) -> tuple[float, float]:
    fake_maps = segmentation_maps(seg, target_images)
    with frozen(seg):
        real_maps = Tensor(smoothed_one_hot(source.labels, disc_cfg.in_channels))
        real_loss = bce_with_logits(disc_forward(disc, real_maps, disc_cfg.slope), 1.0)
        real_loss.backward()
        fake_loss = bce_with_logits(disc_forward(disc, Tensor(fake_maps), disc_cfg.slope), 0.0)
        fake_loss.backward()
    optimizer_step(disc, state)
    return real_loss.item(), fake_loss.item()


def _generator_step(
    seg: ModelParams,
    disc: ModelParams,
    state: OptimizerState,
    target_images: np.ndarray,
    slope: float,
) -> float:
    with frozen(disc):
        maps = softmax_channels(unet_forward(seg, Tensor(target_images)))
        loss = bce_with_logits(disc_forward(disc, maps, slope), 1.0)
        loss.backward()
    optimizer_step(seg, state)
    return loss.item()
