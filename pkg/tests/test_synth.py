import numpy as np
import pytest
from pydantic import ValidationError

from pyvolseg.converters.synth import BOUNDARY, CYTOPLASM, MITOCHONDRIA, generate, slice_geometry
from pyvolseg.errors import BadConfig
from pyvolseg.models.io import SynthConfig
from pyvolseg.models.shared import VolumeDType


class FixedSeeds:
    """Stands in for the generator when seed positions are given."""

    def __init__(self, seeds):
        self.seeds = np.array(seeds, dtype=np.float64)

    def uniform(self, low, high, size):
        assert size == self.seeds.shape
        return self.seeds


def test_generation_is_deterministic():
    cfg = SynthConfig(dims=(3, 32, 32), seed=11)
    images_a, labels_a = generate(cfg)
    images_b, labels_b = generate(cfg)
    assert images_a.data.tobytes() == images_b.data.tobytes()
    assert labels_a.data.tobytes() == labels_b.data.tobytes()


def test_volume_types():
    images, labels = generate(SynthConfig(dims=(2, 16, 24)))
    assert images.dtype is VolumeDType.F32Scalar
    assert labels.dtype is VolumeDType.U8Label
    assert labels.num_classes == 4
    assert images.dims == labels.dims == (2, 16, 24)
    assert images.data.min() >= 0.0 and images.data.max() <= 1.0


def test_two_seeds_split_along_the_bisector():
    h, w, thickness = 40, 40, 3.0
    labels = slice_geometry((h, w), 2, thickness, np.random.default_rng(7))

    seeds = np.random.default_rng(7).uniform((0.0, 0.0), (h, w), size=(2, 2))
    rows, cols = np.mgrid[0:h, 0:w]
    d0 = np.hypot(rows - seeds[0, 0], cols - seeds[0, 1])
    d1 = np.hypot(rows - seeds[1, 0], cols - seeds[1, 1])
    offset = np.abs(d1**2 - d0**2) / (2.0 * np.hypot(*(seeds[1] - seeds[0])))
    expected = np.where(
        offset < thickness / 2.0, BOUNDARY, np.where(d0 <= d1, CYTOPLASM, MITOCHONDRIA)
    )
    assert np.array_equal(labels, expected)


def test_boundary_fraction_of_default_slices():
    _, labels = generate(SynthConfig(dims=(16, 64, 64), seeds_per_slice=8, thickness=2.0, seed=1))
    fraction = float((labels.data == BOUNDARY).mean())
    assert 0.08 < fraction < 0.15


def test_walls_are_as_wide_as_the_thickness():
    # two seeds on one row: the wall is the vertical band around column 20
    labels = slice_geometry((8, 41), 2, 5.0, FixedSeeds([[4.0, 10.0], [4.0, 30.0]]))
    assert labels[:, 18:23].tolist() == [[BOUNDARY] * 5] * 8
    assert not (labels[:, :18] == BOUNDARY).any()
    assert not (labels[:, 23:] == BOUNDARY).any()


def test_source_and_target_share_labels():
    source_images, source_labels = generate(SynthConfig(dims=(3, 32, 32), seed=5))
    target_images, target_labels = generate(SynthConfig(dims=(3, 32, 32), seed=5, style="target"))
    assert source_labels.data.tobytes() == target_labels.data.tobytes()
    assert source_images.data.tobytes() != target_images.data.tobytes()


def test_target_intensity_drifts_between_slices():
    source, _ = generate(SynthConfig(dims=(12, 32, 32), seed=2))
    target, _ = generate(SynthConfig(dims=(12, 32, 32), seed=2, style="target"))
    assert target.data.mean(axis=(1, 2)).std() > source.data.mean(axis=(1, 2)).std()


def test_binary_mode_keeps_only_the_boundary():
    _, four = generate(SynthConfig(dims=(2, 24, 24), seed=4))
    _, binary = generate(SynthConfig(dims=(2, 24, 24), seed=4, class_mode="binary"))
    assert binary.num_classes == 2
    assert np.array_equal(binary.data, (four.data == BOUNDARY).astype(np.uint8))


def test_too_many_seeds():
    with pytest.raises(BadConfig):
        generate(SynthConfig(dims=(1, 2, 2), seeds_per_slice=5))


def test_dims_must_be_positive():
    with pytest.raises(ValidationError):
        SynthConfig(dims=(0, 8, 8))
    assert SynthConfig(dims="2,8,8").dims == (2, 8, 8)
