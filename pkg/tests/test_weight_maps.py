import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.ndimage import distance_transform_edt

from pyvolseg.converters.weight_maps import (
    WeightScheme,
    binarize_labels,
    compute_weight_map,
    compute_weight_volume,
    distance_transform,
    distance_transform_sq,
    entropy_map,
    fixed_ratio_weights,
    gaussian_kernel,
    gaussian_smooth,
    normalize_weights,
)
from pyvolseg.errors import EmptySlice, EvenWindow, NonPositiveRatio, NonPositiveSigma
from pyvolseg.models.shared import Volume3D, VolumeDType

label_planes = arrays(
    np.uint8,
    st.tuples(st.integers(1, 32), st.integers(1, 32)),
    elements=st.integers(0, 3),
)
binary_planes = arrays(
    np.uint8,
    st.tuples(st.integers(1, 24), st.integers(1, 24)),
    elements=st.integers(0, 1),
)


def brute_force_entropy(labels: np.ndarray, window: int) -> np.ndarray:
    h, w = labels.shape
    r = window // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            ys = np.clip(np.arange(y - r, y + r + 1), 0, h - 1)
            xs = np.clip(np.arange(x - r, x + r + 1), 0, w - 1)
            counts = np.bincount(labels[np.ix_(ys, xs)].ravel())
            p = counts[counts > 0] / (window * window)
            out[y, x] = -(p * np.log2(p)).sum()
    return out


def brute_force_distance_sq(b: np.ndarray) -> np.ndarray:
    h, w = b.shape
    background = np.argwhere(b == 0)
    out = np.zeros((h, w), dtype=np.int64)
    if background.size == 0:
        return np.full((h, w), h * h + w * w, dtype=np.int64)
    for y, x in np.argwhere(b != 0):
        out[y, x] = ((background - (y, x)) ** 2).sum(axis=1).min()
    return out


@given(label_planes, st.sampled_from([1, 3, 5]))
def test_entropy_matches_histogram_oracle(labels, window):
    np.testing.assert_allclose(
        entropy_map(labels, window), brute_force_entropy(labels, window), atol=1e-6
    )


def test_entropy_of_constant_slice_is_zero():
    result = entropy_map(np.full((6, 7), 2, dtype=np.uint8), 5)
    assert result.dtype == np.float32
    assert not result.any()
    assert not np.signbit(result).any()


def test_entropy_of_checkerboard_interior():
    board = (np.indices((7, 7)).sum(axis=0) % 2).astype(np.uint8)
    expected = -(5 / 9 * math.log2(5 / 9) + 4 / 9 * math.log2(4 / 9))
    assert entropy_map(board, 3)[3, 3] == pytest.approx(expected, abs=1e-6)


def test_entropy_is_bounded_by_log_of_classes():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 4, size=(16, 16)).astype(np.uint8)
    assert entropy_map(labels, 5).max() <= 2.0 + 1e-6


@pytest.mark.parametrize("window", [0, 2, 4])
def test_entropy_rejects_even_window(window):
    with pytest.raises(EvenWindow):
        entropy_map(np.zeros((4, 4), dtype=np.uint8), window)


def test_entropy_rejects_empty_slice():
    with pytest.raises(EmptySlice):
        entropy_map(np.zeros((0, 4), dtype=np.uint8), 3)


@given(binary_planes)
def test_distance_matches_nearest_background_scan(b):
    assert np.array_equal(distance_transform_sq(b), brute_force_distance_sq(b))


@given(binary_planes)
def test_distance_matches_scipy(b):
    assume((b == 0).any())
    expected = np.rint(distance_transform_edt(b) ** 2).astype(np.int64)
    assert np.array_equal(distance_transform_sq(b), expected)


def test_distance_of_single_boundary_pixel():
    b = np.zeros((5, 5), dtype=np.uint8)
    b[2, 2] = 1
    d = distance_transform(b)
    assert d[2, 2] == 1.0
    assert d.sum() == 1.0


def test_distance_without_background_is_diagonal():
    d = distance_transform(np.ones((3, 4), dtype=np.uint8))
    np.testing.assert_allclose(d, 5.0)


def test_distance_of_all_background_is_zero():
    assert not distance_transform(np.zeros((4, 4), dtype=np.uint8)).any()


@pytest.mark.parametrize("sigma", [1.0, 10.0])
def test_gaussian_impulse_response(sigma):
    radius = math.ceil(3 * sigma)
    size = 2 * radius + 11
    impulse = np.zeros((size, size), dtype=np.float32)
    impulse[size // 2, size // 2] = 1.0
    response = gaussian_smooth(impulse, sigma)

    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-(offsets**2) / (2 * sigma**2))
    kernel /= kernel.sum()
    c = size // 2
    np.testing.assert_allclose(
        response[c - radius : c + radius + 1, c - radius : c + radius + 1],
        np.outer(kernel, kernel),
        atol=1e-6,
    )
    assert abs(float(response.sum(dtype=np.float64)) - 1.0) < 1e-4


def test_gaussian_kernel_is_normalized_and_symmetric():
    kernel = gaussian_kernel(2.5)
    assert len(kernel) == 2 * 8 + 1
    assert kernel.sum() == pytest.approx(1.0)
    np.testing.assert_array_equal(kernel, kernel[::-1])


def test_gaussian_preserves_constant_maps():
    np.testing.assert_allclose(gaussian_smooth(np.full((9, 9), 3.0), 2.0), 3.0, rtol=1e-6)


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_gaussian_rejects_non_positive_sigma(sigma):
    with pytest.raises(NonPositiveSigma):
        gaussian_kernel(sigma)


def test_fixed_ratio_weights():
    np.testing.assert_array_equal(
        fixed_ratio_weights(np.array([[0, 1], [1, 0]]), 10.0), [[1.0, 10.0], [10.0, 1.0]]
    )
    with pytest.raises(NonPositiveRatio):
        fixed_ratio_weights(np.zeros((2, 2)), 0.0)


def test_binarize_keeps_only_the_boundary_class():
    labels = np.array([[0, 1, 2, 3]], dtype=np.uint8)
    assert binarize_labels(labels).tolist() == [[0, 1, 0, 0]]
    assert binarize_labels(labels, boundary_class=3).tolist() == [[0, 0, 0, 1]]


weight_planes = arrays(
    np.float64,
    st.tuples(st.integers(1, 10), st.integers(1, 10)),
    elements=st.floats(0.0, 100.0, allow_subnormal=False),
)


@given(weight_planes)
def test_normalized_weights_have_unit_mean_and_floor(w):
    assume(w.any())
    n = normalize_weights(w, 0.05)
    assert n.dtype == np.float32
    assert float(n.mean(dtype=np.float64)) == pytest.approx(1.0, abs=1e-5)
    assert n.min() >= 0.05 - 1e-7


@given(weight_planes)
def test_normalization_is_idempotent(w):
    once = normalize_weights(w)
    np.testing.assert_allclose(normalize_weights(once), once, atol=1e-5)


def test_normalize_all_zero_gives_ones():
    np.testing.assert_array_equal(normalize_weights(np.zeros((3, 3))), np.ones((3, 3)))


def test_normalize_two_level_map():
    n = normalize_weights(np.array([[0.0, 2.0]]))
    np.testing.assert_allclose(n, [[0.05, 1.95]], atol=1e-6)


def test_normalize_preserves_order():
    w = np.array([[0.0, 1.0, 4.0, 9.0]])
    n = normalize_weights(w)
    assert (np.diff(n[0]) >= 0).all()


@pytest.mark.parametrize("scheme", list(WeightScheme))
def test_every_scheme_gives_finite_unit_mean_maps(scheme):
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 4, size=(20, 20)).astype(np.uint8)
    w = compute_weight_map(labels, scheme, sigma=2.0)
    assert np.isfinite(w).all()
    assert float(w.mean(dtype=np.float64)) == pytest.approx(1.0, abs=1e-5)


def test_constant_labels_give_uniform_entropy_weights():
    labels = np.zeros((8, 8), dtype=np.uint8)
    np.testing.assert_array_equal(compute_weight_map(labels, WeightScheme.entropy), np.ones((8, 8)))


def test_weight_volume_matches_per_slice_maps():
    rng = np.random.default_rng(2)
    labels = Volume3D.labels(rng.integers(0, 4, size=(3, 12, 12)).astype(np.uint8), 4)
    volume = compute_weight_volume(labels, WeightScheme.entropy, window=3, normalize=False)
    assert volume.dtype is VolumeDType.F32Scalar
    for z in range(3):
        np.testing.assert_array_equal(
            volume.data[z], entropy_map(labels.data[z], 3, num_classes=4)
        )


@given(
    arrays(np.float64, (12, 10), elements=st.floats(0.0, 10.0)),
    arrays(np.float64, (12, 10), elements=st.floats(0.0, 10.0)),
    st.floats(0.0, 5.0),
    st.floats(0.0, 5.0),
)
def test_gaussian_smoothing_is_linear(x, y, a, b):
    combined = gaussian_smooth(a * x + b * y, 1.5).astype(np.float64)
    separate = a * gaussian_smooth(x, 1.5).astype(np.float64) + b * gaussian_smooth(y, 1.5).astype(np.float64)
    np.testing.assert_allclose(combined, separate, rtol=1e-5, atol=1e-4)


@pytest.mark.parametrize("sigma", [2.0, 5.0, 10.0])
@pytest.mark.parametrize("column", [4, 20])
def test_distance_weights_concentrate_on_sparse_boundaries(sigma, column):
    labels = np.zeros((48, 96), dtype=np.uint8)
    labels[:, column : column + 2] = 1
    weights = compute_weight_map(labels, WeightScheme.distance, sigma=sigma)
    far = distance_transform_edt(labels == 0) > 3 * sigma
    assert far.any()
    assert weights[labels == 1].mean() > weights[far].mean()
    np.testing.assert_allclose(weights[far], 0.05, rtol=1e-5)
