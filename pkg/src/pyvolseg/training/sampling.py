import logging
import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from pyvolseg.errors import CropLargerThanSlice, ShapeMismatch

LOGGER = logging.getLogger(__name__)

JITTER_GAIN = (0.85, 1.15)
JITTER_BIAS = (-0.1, 0.1)


class CropSettings(Protocol):
    crop: int
    batch: int


@dataclass(frozen=True)
class SliceSplit:
    train: tuple[int, ...]
    validation: tuple[int, ...]


@dataclass
class Batch:
    images: np.ndarray
    """(batch, 1, crop, crop) float32"""
    labels: np.ndarray | None
    """(batch, crop, crop) int64"""
    weights: np.ndarray | None
    """(batch, crop, crop) float32"""


def split_slices(num_slices: int, val_frac: float) -> SliceSplit:
    """Hold out the trailing floor(val_frac * num_slices) slices, always keeping one for training."""
    held_out = math.floor(val_frac * num_slices + 1e-9)
    held_out = min(held_out, max(num_slices - 1, 0))
    cut = num_slices - held_out
    return SliceSplit(train=tuple(range(cut)), validation=tuple(range(cut, num_slices)))


def sample_batch(
    images: np.ndarray,
    labels: np.ndarray | None,
    weights: np.ndarray | None,
    cfg: CropSettings,
    rng: np.random.Generator,
    slices: Sequence[int],
) -> Batch:
    """Random crops from uniformly drawn slices; each sample draws slice, row and column in turn."""
    _, h, w = images.shape
    for name, volume in (("labels", labels), ("weights", weights)):
        if volume is not None and volume.shape != images.shape:
            raise ShapeMismatch(f"{name} {volume.shape} do not match images {images.shape}")
    if cfg.crop > h or cfg.crop > w:
        raise CropLargerThanSlice(f"Crop {cfg.crop} does not fit slices of {h}x{w}")
    if not slices:
        raise ShapeMismatch("No slices to sample from")

    picks = []
    for _ in range(cfg.batch):
        z = slices[int(rng.integers(len(slices)))]
        y = int(rng.integers(0, h - cfg.crop + 1))
        x = int(rng.integers(0, w - cfg.crop + 1))
        picks.append((z, slice(y, y + cfg.crop), slice(x, x + cfg.crop)))

    def gather(volume: np.ndarray, dtype) -> np.ndarray:
        return np.stack([volume[z, ys, xs] for z, ys, xs in picks]).astype(dtype)

    x_batch = gather(images, np.float32)[:, None]
    y_batch = gather(labels, np.int64) if labels is not None else None
    if labels is None:
        w_batch = None
    elif weights is None:
        w_batch = np.ones((cfg.batch, cfg.crop, cfg.crop), dtype=np.float32)
    else:
        w_batch = gather(weights, np.float32)
    return Batch(images=x_batch, labels=y_batch, weights=w_batch)


def apply_jitter(x: np.ndarray, gain: float, bias: float) -> np.ndarray:
    return np.clip(gain * np.asarray(x, dtype=np.float32) + bias, 0.0, 1.0).astype(np.float32)


def jitter(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random photometric gain/bias, clamped to [0, 1]."""
    gain = rng.uniform(*JITTER_GAIN)
    bias = rng.uniform(*JITTER_BIAS)
    return apply_jitter(x, gain, bias)


def jitter_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Jitter every (1, crop, crop) sample of a batch with its own draw."""
    return np.stack([jitter(sample, rng) for sample in images])
