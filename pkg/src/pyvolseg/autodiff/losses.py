import logging

import numpy as np
from scipy.special import expit, log_softmax

from pyvolseg.autodiff.tensor import Tensor, from_op
from pyvolseg.errors import AllZeroWeights, InvariantViolation, LabelOutOfRange, ShapeMismatch

LOGGER = logging.getLogger(__name__)


def weighted_cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Σ w·(−log softmax(logits)[target]) / Σ w over the whole batch."""
    if logits.data.ndim != 4:
        raise ShapeMismatch(f"Logits must be NCHW, got {logits.shape}")
    n, c, h, w = logits.shape
    targets = np.asarray(targets)
    weights = np.asarray(weights, dtype=np.float64)
    if targets.shape != (n, h, w) or weights.shape != (n, h, w):
        raise ShapeMismatch(
            f"Targets {targets.shape} and weights {weights.shape} must both be {(n, h, w)}"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise LabelOutOfRange(f"Target labels must lie in [0, {c}), got max {targets.max()}")
    if not np.isfinite(weights).all() or (weights < 0).any():
        raise InvariantViolation("Loss weights must be finite and non-negative")
    total_weight = float(weights.sum())
    if total_weight <= 0:
        raise AllZeroWeights("Loss weights sum to zero")

    index = targets.astype(np.int64)[:, None]
    log_probs = log_softmax(logits.data.astype(np.float64), axis=1)
    nll = -np.take_along_axis(log_probs, index, axis=1)[:, 0]
    loss = np.array((weights * nll).sum() / total_weight)

    def backward(grad: np.ndarray):
        delta = np.exp(log_probs)
        np.put_along_axis(delta, index, np.take_along_axis(delta, index, axis=1) - 1.0, axis=1)
        return (delta * (weights / total_weight)[:, None] * grad,)

    return from_op(loss.astype(logits.dtype), "weighted_cross_entropy", (logits,), backward)


def bce_with_logits(logits: Tensor, target: float | np.ndarray) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 targets."""
    z = logits.data.astype(np.float64)
    t = np.broadcast_to(np.asarray(target, dtype=np.float64), z.shape)
    # max(z, 0) - z*t + log(1 + exp(-|z|)) is stable for any z
    loss = np.array((np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))).mean())

    def backward(grad: np.ndarray):
        return ((expit(z) - t) / z.size * grad,)

    return from_op(loss.astype(logits.dtype), "bce_with_logits", (logits,), backward)
