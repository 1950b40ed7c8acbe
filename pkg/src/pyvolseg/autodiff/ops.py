"""Differentiable layer primitives over NCHW tensors.

Sums and matrix products accumulate in float64; results are cast back to the
dtype of the primary input.
"""

import contextlib
import contextvars
import logging
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, softmax

from pyvolseg.autodiff.tensor import Tensor, from_op
from pyvolseg.errors import IndivisibleSpatialDims, ShapeMismatch

LOGGER = logging.getLogger(__name__)

_BRANCHES: contextvars.ContextVar[list[bytes] | None] = contextvars.ContextVar(
    "branches", default=None
)


@contextlib.contextmanager
def record_branches() -> Iterator[list[bytes]]:
    """Collect the branch decisions (ReLU masks, max-pool winners) of every op run inside."""
    log: list[bytes] = []
    token = _BRANCHES.set(log)
    try:
        yield log
    finally:
        _BRANCHES.reset(token)


def _record(decisions: np.ndarray) -> None:
    log = _BRANCHES.get()
    if log is not None:
        log.append(np.ascontiguousarray(decisions).tobytes())


def _check_4d(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ShapeMismatch(f"{op} expects an NCHW tensor, got shape {x.shape}")


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: str = "same") -> Tensor:
    """2D cross-correlation via im2col; "same" padding is k//2 zeros on each side."""
    _check_4d(x, "conv2d")
    if w.data.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeMismatch(f"conv2d expects square (Cout, Cin, k, k) weights, got {w.shape}")
    n, c, h, wd = x.shape
    cout, cin, k, _ = w.shape
    if c != cin:
        raise ShapeMismatch(f"conv2d input has {c} channels, weights expect {cin}")
    if b.shape != (cout,):
        raise ShapeMismatch(f"conv2d bias must have shape ({cout},), got {b.shape}")
    if pad == "same":
        if k % 2 == 0:
            raise ShapeMismatch(f"'same' padding needs an odd kernel, got {k}")
        p = k // 2
    elif pad == "valid":
        p = 0
    else:
        raise ValueError(f"Unknown padding {pad!r}")
    if h + 2 * p < k or wd + 2 * p < k:
        raise ShapeMismatch(f"Kernel {k} does not fit input {h}x{wd}")

    padded = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
    cols = cols.astype(np.float64)
    wmat = w.data.reshape(cout, -1).astype(np.float64)
    out = cols @ wmat.T + b.data.astype(np.float64)
    out = np.ascontiguousarray(out.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))

    def backward(grad: np.ndarray):
        gmat = grad.transpose(0, 2, 3, 1).reshape(-1, cout).astype(np.float64)
        grad_w = (gmat.T @ cols).reshape(w.shape)
        grad_b = gmat.sum(axis=0)
        grad_cols = (gmat @ wmat).reshape(n, oh, ow, c, k, k)
        grad_padded = np.zeros(padded.shape, dtype=np.float64)
        for i in range(k):
            for j in range(k):
                grad_padded[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                    grad_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        grad_x = grad_padded[:, :, p : p + h, p : p + wd]
        return grad_x, grad_w, grad_b

    return from_op(out.astype(x.dtype), "conv2d", (x, w, b), backward)


def maxpool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Max over k×k windows; ties route the gradient to the first maximal element."""
    _check_4d(x, "maxpool2d")
    n, c, h, w = x.shape
    if h % stride or w % stride:
        raise IndivisibleSpatialDims(f"Spatial dims {h}x{w} are not divisible by stride {stride}")
    if k > h or k > w:
        raise ShapeMismatch(f"Pool window {k} does not fit input {h}x{w}")
    windows = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = windows.shape[2], windows.shape[3]
    flat = windows.reshape(n, c, oh, ow, k * k)
    winner = np.argmax(flat, axis=-1)
    _record(winner)
    out = np.take_along_axis(flat, winner[..., None], axis=-1)[..., 0]

    def backward(grad: np.ndarray):
        grad_x = np.zeros(x.shape, dtype=np.float64)
        for index in range(k * k):
            i, j = divmod(index, k)
            grad_x[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += np.where(
                winner == index, grad, 0.0
            )
        return (grad_x,)

    return from_op(np.ascontiguousarray(out), "maxpool2d", (x,), backward)


def upsample_nn(x: Tensor, factor: int = 2) -> Tensor:
    _check_4d(x, "upsample_nn")
    if factor < 1:
        raise ShapeMismatch(f"Upsampling factor must be >= 1, got {factor}")
    n, c, h, w = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(grad: np.ndarray):
        return (grad.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5), dtype=np.float64),)

    return from_op(out, "upsample_nn", (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _check_4d(a, "concat_channels")
    _check_4d(b, "concat_channels")
    if (a.shape[0], *a.shape[2:]) != (b.shape[0], *b.shape[2:]):
        raise ShapeMismatch(f"Cannot concatenate {a.shape} and {b.shape} along channels")
    split = a.shape[1]
    out = np.concatenate([a.data, b.data.astype(a.dtype)], axis=1)

    def backward(grad: np.ndarray):
        return grad[:, :split], grad[:, split:]

    return from_op(out, "concat_channels", (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _record(np.packbits(mask))

    def backward(grad: np.ndarray):
        return (grad * mask,)

    return from_op(np.where(mask, x.data, 0).astype(x.dtype), "relu", (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0
    _record(np.packbits(mask))
    factor = np.where(mask, 1.0, slope)

    def backward(grad: np.ndarray):
        return (grad * factor,)

    return from_op((x.data * factor).astype(x.dtype), "leaky_relu", (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data.astype(np.float64))

    def backward(grad: np.ndarray):
        return (grad * s * (1.0 - s),)

    return from_op(s.astype(x.dtype), "sigmoid", (x,), backward)


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 1 of an NCHW tensor."""
    _check_4d(x, "softmax_channels")
    s = softmax(x.data.astype(np.float64), axis=1)

    def backward(grad: np.ndarray):
        return (s * (grad - (grad * s).sum(axis=1, keepdims=True)),)

    return from_op(s.astype(x.dtype), "softmax_channels", (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    _check_4d(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True, dtype=np.float64)

    def backward(grad: np.ndarray):
        return (np.broadcast_to(grad / (h * w), x.shape),)

    return from_op(out.astype(x.dtype), "global_avg_pool", (x,), backward)


def weighted_sum(x: Tensor, coefficients: np.ndarray) -> Tensor:
    """Scalar sum(x * coefficients) for a constant coefficient array."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.shape != x.shape:
        raise ShapeMismatch(f"Coefficients {coefficients.shape} do not match tensor {x.shape}")
    total = np.array((x.data.astype(np.float64) * coefficients).sum())

    def backward(grad: np.ndarray):
        return (grad * coefficients,)

    return from_op(total.astype(x.dtype), "weighted_sum", (x,), backward)
