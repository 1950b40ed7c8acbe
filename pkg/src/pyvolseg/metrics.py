import logging
from dataclasses import dataclass

import numpy as np

from pyvolseg.errors import LabelOutOfRange, ShapeMismatch

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """counts[i, j] = pixels with truth i predicted as j."""

    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def per_class_jaccard(self) -> np.ndarray:
        return jaccard_from_confusion(self.counts)

    def mean_jaccard(self) -> float:
        return float(self.per_class_jaccard().mean())


def _check_planes(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"Prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred, gt


def jaccard(pred: np.ndarray, gt: np.ndarray, c: int) -> float:
    """|pred=c ∧ gt=c| / |pred=c ∨ gt=c|, and 1.0 when the class is absent from both."""
    pred, gt = _check_planes(pred, gt)
    p, g = pred == c, gt == c
    union = int(np.count_nonzero(p | g))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(p & g)) / union


def confusion(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> ConfusionMatrix:
    pred, gt = _check_planes(pred, gt)
    pred, gt = pred.astype(np.int64).ravel(), gt.astype(np.int64).ravel()
    for name, values in (("prediction", pred), ("ground truth", gt)):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise LabelOutOfRange(f"{name} labels fall outside [0, {num_classes})")
    counts = np.bincount(gt * num_classes + pred, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def jaccard_from_confusion(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.int64)
    intersection = np.diag(counts)
    union = counts.sum(axis=0) + counts.sum(axis=1) - intersection
    scores = np.ones(counts.shape[0], dtype=np.float64)
    present = union > 0
    scores[present] = intersection[present] / union[present]
    return scores


def mean_jaccard(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> float:
    return confusion(pred, gt, num_classes).mean_jaccard()


def foreground_jaccard(pred: np.ndarray, gt: np.ndarray, boundary_class: int = 1) -> float:
    return jaccard(pred, gt, boundary_class)
