from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pyvolseg.errors import (
    BadDtypeCode,
    BadMagic,
    BadPgmHeader,
    IndexOutOfRange,
    InvariantViolation,
    IoFailure,
    LabelOutOfRange,
    TrailingData,
    TruncatedFile,
)
from pyvolseg.models.shared import Slice2D, Volume3D, VolumeDType
from pyvolseg.volume_io import (
    HEADER_SIZE,
    MAGIC,
    decode_volume,
    encode_volume,
    export_pgm,
    get_slice,
    import_pgm,
    read_volume,
    to_gray_bytes,
    write_volume,
)

shapes = st.tuples(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6))


@given(arrays(np.uint8, shapes, elements=st.integers(0, 3)))
def test_label_volume_bytes_roundtrip(data):
    volume = Volume3D.labels(data, 4)
    assert decode_volume(encode_volume(volume)) == volume


@given(arrays(np.float32, shapes, elements=st.floats(-1e6, 1e6, width=32)))
def test_scalar_volume_bytes_roundtrip(data):
    volume = Volume3D.scalars(data)
    decoded = decode_volume(encode_volume(volume))
    assert decoded == volume
    assert decoded.data.tobytes() == data.tobytes()


def test_single_scalar_voxel_file_size(tmp_path: Path):
    volume = Volume3D.scalars(np.zeros((1, 1, 1), dtype=np.float32))
    write_volume(volume, tmp_path / "one.vseg")
    assert (tmp_path / "one.vseg").stat().st_size == 24
    assert read_volume(tmp_path / "one.vseg") == volume


def test_file_roundtrip(tmp_path: Path):
    volume = Volume3D.labels(np.arange(24, dtype=np.uint8).reshape(2, 3, 4) % 5, 5)
    write_volume(volume, tmp_path / "v.vseg")
    assert read_volume(tmp_path / "v.vseg") == volume


def test_header_layout():
    raw = encode_volume(Volume3D.scalars(np.zeros((2, 3, 4), dtype=np.float32)))
    assert raw[:6] == MAGIC
    assert raw[6] == 1 and raw[7] == 0
    assert np.frombuffer(raw[8:20], dtype="<u4").tolist() == [2, 3, 4]
    assert len(raw) == HEADER_SIZE + 2 * 3 * 4 * 4


def test_bad_magic():
    raw = bytearray(encode_volume(Volume3D.labels(np.zeros((1, 2, 2), dtype=np.uint8), 1)))
    raw[0:1] = b"X"
    with pytest.raises(BadMagic):
        decode_volume(bytes(raw))


def test_truncated_payload():
    raw = encode_volume(Volume3D.labels(np.ones((2, 4, 4), dtype=np.uint8), 2))
    with pytest.raises(TruncatedFile):
        decode_volume(raw[:-1])


def test_truncated_header():
    with pytest.raises(TruncatedFile):
        decode_volume(MAGIC + b"\x00")


def test_trailing_bytes():
    raw = encode_volume(Volume3D.labels(np.ones((1, 2, 2), dtype=np.uint8), 2))
    with pytest.raises(TrailingData):
        decode_volume(raw + b"\x00")


def test_unknown_dtype_code():
    raw = bytearray(encode_volume(Volume3D.labels(np.ones((1, 2, 2), dtype=np.uint8), 2)))
    raw[6] = 7
    with pytest.raises(BadDtypeCode):
        decode_volume(bytes(raw))


def test_label_above_class_count_rejected():
    with pytest.raises(LabelOutOfRange):
        Volume3D.labels(np.full((1, 2, 2), 4, dtype=np.uint8), 4)


def test_scalar_volume_rejects_nan():
    with pytest.raises(InvariantViolation):
        Volume3D.scalars(np.full((1, 2, 2), np.nan, dtype=np.float32))


def test_volume_is_read_only():
    volume = Volume3D.labels(np.zeros((1, 2, 2), dtype=np.uint8), 2)
    with pytest.raises(ValueError):
        volume.data[0, 0, 0] = 1


def test_get_slice_bounds():
    volume = Volume3D.labels(np.arange(8, dtype=np.uint8).reshape(2, 2, 2), 8)
    assert get_slice(volume, 1).data.tolist() == [[4, 5], [6, 7]]
    with pytest.raises(IndexOutOfRange):
        get_slice(volume, 2)


def test_get_slice_does_not_share_memory_with_the_volume():
    volume = Volume3D.labels(np.zeros((2, 3, 3), dtype=np.uint8), 2)
    plane = get_slice(volume, 0)
    assert not np.shares_memory(plane.data, volume.data)
    edited = np.array(plane.data)
    edited[:] = 1
    assert not volume.data.any()
    assert not plane.data.any()


def test_read_missing_file(tmp_path: Path):
    with pytest.raises(IoFailure):
        read_volume(tmp_path / "missing.vseg")


def test_from_slices_stacks_in_order():
    slices = [Slice2D.labels(np.full((2, 2), z, dtype=np.uint8), 3) for z in range(3)]
    volume = Volume3D.from_slices(slices)
    assert volume.dims == (3, 2, 2)
    assert volume.data[:, 0, 0].tolist() == [0, 1, 2]


@given(arrays(np.uint8, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.integers(0, 255)))
def test_pgm_roundtrip_of_label_slices(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("pgm") / "s.pgm"
    labels = Slice2D.labels(data)
    export_pgm(labels, path)
    assert import_pgm(path, labels.num_classes) == labels


def test_scalar_slice_gray_mapping():
    scalars = Slice2D.scalars(np.array([[0.0, 0.5], [1.0, 0.25]], dtype=np.float32))
    assert to_gray_bytes(scalars).tolist() == [[0, 128], [255, 64]]


def test_constant_scalar_slice_maps_to_zero():
    assert not to_gray_bytes(Slice2D.scalars(np.full((3, 3), 7.0))).any()


def test_pgm_header_is_binary_graymap(tmp_path: Path):
    export_pgm(Slice2D.labels(np.zeros((3, 5), dtype=np.uint8), 1), tmp_path / "s.pgm")
    assert (tmp_path / "s.pgm").read_bytes().startswith(b"P5")


def test_import_rejects_non_pgm(tmp_path: Path):
    (tmp_path / "bad.pgm").write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(BadPgmHeader):
        import_pgm(tmp_path / "bad.pgm")
    (tmp_path / "junk.pgm").write_bytes(b"not an image at all")
    with pytest.raises(BadPgmHeader):
        import_pgm(tmp_path / "junk.pgm")


def test_import_default_class_count(tmp_path: Path):
    export_pgm(Slice2D.labels(np.array([[0, 3]], dtype=np.uint8)), tmp_path / "s.pgm")
    imported = import_pgm(tmp_path / "s.pgm")
    assert imported.dtype is VolumeDType.U8Label
    assert imported.num_classes == 4


def test_full_range_scalar_slice_imports_as_labels(tmp_path: Path):
    export_pgm(Slice2D.scalars(np.array([[0.0, 1.0]], dtype=np.float32)), tmp_path / "s.pgm")
    assert (tmp_path / "s.pgm").read_bytes().endswith(b"\x00\xff")
    imported = import_pgm(tmp_path / "s.pgm")
    assert imported.data.tolist() == [[0, 255]]
    assert imported.num_classes == 256


def test_import_rejects_other_maxval(tmp_path: Path):
    (tmp_path / "s.pgm").write_bytes(b"P5\n2 1\n3\n\x00\x03")
    with pytest.raises(BadPgmHeader):
        import_pgm(tmp_path / "s.pgm")


def test_import_rejects_ascii_graymap(tmp_path: Path):
    (tmp_path / "s.pgm").write_bytes(b"P2\n2 1\n255\n0 255\n")
    with pytest.raises(BadPgmHeader):
        import_pgm(tmp_path / "s.pgm")


def test_import_short_pixel_data(tmp_path: Path):
    (tmp_path / "s.pgm").write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(TruncatedFile):
        import_pgm(tmp_path / "s.pgm")


def test_import_missing_pgm(tmp_path: Path):
    with pytest.raises(IoFailure):
        import_pgm(tmp_path / "missing.pgm")
