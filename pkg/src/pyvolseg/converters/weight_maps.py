"""Per-pixel loss-weight maps derived from ground-truth label slices.

Every map is float32, finite and non-negative. Borders are handled by
clamp-to-edge padding for both the entropy windows and the Gaussian kernel.
"""

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import correlate1d

from pyvolseg.errors import (
    EmptySlice,
    EvenWindow,
    InvariantViolation,
    NonPositiveRatio,
    NonPositiveSigma,
)
from pyvolseg.models.shared import Slice2D, Volume3D, VolumeDType

LOGGER = logging.getLogger(__name__)


class WeightScheme(enum.Enum):
    entropy = "entropy"
    distance = "distance"
    ratio = "ratio"
    uniform = "uniform"


def _label_array(labels: Slice2D | np.ndarray) -> np.ndarray:
    if isinstance(labels, Slice2D):
        if labels.dtype is not VolumeDType.U8Label:
            raise InvariantViolation("Expected a U8Label slice")
        return labels.data
    return np.asarray(labels)


def entropy_map(
    labels: Slice2D | np.ndarray, window: int = 5, num_classes: int | None = None
) -> np.ndarray:
    """Label entropy (base 2) of the window×window neighbourhood of every pixel."""
    if window < 1 or window % 2 == 0:
        raise EvenWindow(f"Entropy window must be odd and >= 1, got {window}")
    data = _label_array(labels)
    if data.size == 0:
        raise EmptySlice("Cannot compute an entropy map of an empty slice")
    if num_classes is None:
        num_classes = int(data.max()) + 1

    radius = window // 2
    padded = np.pad(data, radius, mode="edge")
    windows = sliding_window_view(padded, (window, window))  # (y, x, k, k)
    area = float(window * window)

    entropy = np.zeros(data.shape, dtype=np.float64)
    for c in range(num_classes):
        freq = (windows == c).sum(axis=(2, 3)) / area
        present = freq > 0
        entropy[present] -= freq[present] * np.log2(freq[present])
    # a single-label window gives -1*log2(1) = -0.0
    return np.abs(entropy).astype(np.float32)


def binarize_labels(labels: Slice2D | np.ndarray, boundary_class: int = 1) -> np.ndarray:
    """1 where the label equals the boundary class, 0 elsewhere."""
    return (_label_array(labels) == boundary_class).astype(np.uint8)


def _edt_1d(f: np.ndarray) -> np.ndarray:
    """Squared distance transform of a sampled function along one axis.

    Lower envelope of the parabolas rooted at each sample (q, f[q]).
    """
    n = f.shape[0]
    d = np.empty(n, dtype=np.float64)
    v = np.zeros(n, dtype=np.int64)  # roots of the parabolas in the envelope
    z = np.empty(n + 1, dtype=np.float64)  # boundaries between envelope pieces
    k = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        while True:
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p))
            if s > z[k]:
                break
            k -= 1
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def distance_transform_sq(b: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance from each boundary pixel to the nearest background pixel.

    Background pixels are 0. When there is no background pixel at all the
    distance is the slice diagonal, squared.
    """
    b = np.asarray(b)
    h, w = b.shape
    # stands in for +inf; larger than any squared distance inside the slice
    far = float(h * h + w * w)
    f = np.where(b > 0, far, 0.0)

    columns = np.empty_like(f)
    for x in range(w):
        columns[:, x] = _edt_1d(f[:, x])
    result = np.empty_like(f)
    for y in range(h):
        result[y, :] = _edt_1d(columns[y, :])

    if not (b == 0).any():
        LOGGER.debug("All-boundary map, using the diagonal as distance")
        return np.full((h, w), h * h + w * w, dtype=np.int64)
    return np.rint(result).astype(np.int64)


def distance_transform(b: np.ndarray) -> np.ndarray:
    return np.sqrt(distance_transform_sq(b).astype(np.float64)).astype(np.float32)


def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise NonPositiveSigma(f"Sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_smooth(w: np.ndarray, sigma: float = 10.0) -> np.ndarray:
    kernel = gaussian_kernel(sigma)
    smoothed = np.asarray(w, dtype=np.float64)
    for axis in (0, 1):
        smoothed = correlate1d(smoothed, kernel, axis=axis, mode="nearest")
    # clip rounding residue below zero
    return np.maximum(smoothed, 0.0).astype(np.float32)


def fixed_ratio_weights(b: np.ndarray, ratio: float) -> np.ndarray:
    if ratio <= 0:
        raise NonPositiveRatio(f"Ratio must be positive, got {ratio}")
    return np.where(np.asarray(b) == 1, ratio, 1.0).astype(np.float32)


def normalize_weights(w: np.ndarray, floor: float = 0.05) -> np.ndarray:
    """Return max(s*w, floor) with the scale s chosen so that the mean is exactly 1.

    The result has min >= floor and mean 1, and normalizing it again is a no-op.
    """
    if not 0 <= floor < 1:
        raise InvariantViolation(f"Floor must lie in [0, 1), got {floor}")
    values = np.asarray(w, dtype=np.float64)
    if not np.isfinite(values).all() or (values < 0).any():
        raise InvariantViolation("Weights must be finite and non-negative")
    if not values.any():
        return np.ones(values.shape, dtype=np.float32)

    n = values.size
    ordered = np.sort(values.ravel())
    # tail[k] = sum of the n-k largest values, clamped count = k
    tail = np.concatenate([np.cumsum(ordered[::-1])[::-1], [0.0]])
    clamped = np.arange(n + 1)
    below = np.concatenate([[-np.inf], ordered])  # largest clamped value
    above = np.concatenate([ordered, [np.inf]])  # smallest unclamped value
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = (n - clamped * floor) / tail
        valid = (tail > 0) & (below * scale <= floor) & (above * scale >= floor)
    k = int(np.argmax(valid))
    result = np.maximum(values * scale[k], floor)
    return result.astype(np.float32)


def compute_weight_map(
    labels: Slice2D | np.ndarray,
    scheme: WeightScheme,
    *,
    window: int = 5,
    sigma: float = 10.0,
    ratio: float = 10.0,
    boundary_class: int = 1,
    num_classes: int | None = None,
    floor: float = 0.05,
    normalize: bool = True,
) -> np.ndarray:
    """Weight map of one label slice for the given scheme."""
    data = _label_array(labels)
    if scheme is WeightScheme.entropy:
        raw = entropy_map(data, window, num_classes)
    elif scheme is WeightScheme.distance:
        raw = gaussian_smooth(distance_transform(binarize_labels(data, boundary_class)), sigma)
    elif scheme is WeightScheme.ratio:
        raw = fixed_ratio_weights(binarize_labels(data, boundary_class), ratio)
    else:
        raw = np.ones(data.shape, dtype=np.float32)
    return normalize_weights(raw, floor) if normalize else raw


def compute_weight_volume(
    labels: Volume3D,
    scheme: WeightScheme,
    *,
    workers: int = 4,
    **kwargs,
) -> Volume3D:
    """Apply compute_weight_map to every slice; slices are independent and ordered."""
    kwargs.setdefault("num_classes", labels.num_classes)

    def one(z: int) -> np.ndarray:
        return compute_weight_map(labels.data[z], scheme, **kwargs)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        planes = list(pool.map(one, range(labels.dims[0])))
    LOGGER.info(f"Computed {scheme.value} weight maps for {len(planes)} slices")
    return Volume3D.from_slices([Slice2D.scalars(plane) for plane in planes])
