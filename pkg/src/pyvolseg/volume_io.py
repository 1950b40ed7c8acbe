import io
import logging
import re
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from pyvolseg.errors import (
    BadDtypeCode,
    BadMagic,
    BadPgmHeader,
    IndexOutOfRange,
    IoFailure,
    TrailingData,
    TruncatedFile,
)
from pyvolseg.models.shared import NUMPY_DTYPE, Slice2D, Volume3D, VolumeDType

LOGGER = logging.getLogger(__name__)

MAGIC = b"VSEG1\n"
HEADER_SIZE = 20

# magic, width, height and maxval separated by single whitespace runs
PGM_HEADER = re.compile(rb"\A(P\d)\s+(\d+)\s+(\d+)\s+(\d+)\s")

# little-endian element types of the payload
PAYLOAD_DTYPE: dict[VolumeDType, np.dtype] = {
    VolumeDType.U8Label: np.dtype("<u1"),
    VolumeDType.F32Scalar: np.dtype("<f4"),
}


def encode_volume(v: Volume3D) -> bytes:
    """Pack a volume into the VSEG container."""
    # container layout:
    # - bytes 0-5: magic "VSEG1\n"
    # - byte 6: dtype code (0=U8Label, 1=F32Scalar)
    # - byte 7: class count (0 for F32Scalar)
    # - bytes 8-19: uint32 dims z, y, x
    # - payload: one element per voxel, x fastest
    v.validate()
    header = np.array([v.dtype.value, v.num_classes], dtype="<u1").tobytes()
    dims = np.array(v.dims, dtype="<u4").tobytes()
    payload = v.data.astype(PAYLOAD_DTYPE[v.dtype]).tobytes()
    return MAGIC + header + dims + payload


def decode_volume(raw: bytes) -> Volume3D:
    if len(raw) < HEADER_SIZE:
        if raw[: len(MAGIC)] != MAGIC[: len(raw)]:
            raise BadMagic("Not a VSEG container")
        raise TruncatedFile(f"Header needs {HEADER_SIZE} bytes, found {len(raw)}")
    if raw[:6] != MAGIC:
        raise BadMagic(f"Bad magic bytes {raw[:6]!r}, expected {MAGIC!r}")

    data = np.frombuffer(raw, dtype=np.uint8)
    dtype_code, num_classes = int(data[6]), int(data[7])
    try:
        dtype = VolumeDType(dtype_code)
    except ValueError as exc:
        raise BadDtypeCode(f"Unknown dtype code {dtype_code}") from exc
    z, y, x = (int(d) for d in np.frombuffer(raw[8:20], dtype="<u4"))

    element = PAYLOAD_DTYPE[dtype]
    expected = z * y * x * element.itemsize
    actual = len(raw) - HEADER_SIZE
    if actual < expected:
        raise TruncatedFile(
            f"Payload size mismatch: header promises {expected} bytes, found {actual}"
        )
    if actual > expected:
        raise TrailingData(f"Malformed VSEG file, {actual - expected} extra bytes at the end")

    payload = np.frombuffer(raw[HEADER_SIZE:], dtype=element).reshape((z, y, x))
    return Volume3D(
        data=payload.astype(NUMPY_DTYPE[dtype]), dtype=dtype, num_classes=num_classes
    )


def read_volume(path: Path) -> Volume3D:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"Cannot read volume {path}: {exc}") from exc
    volume = decode_volume(raw)
    LOGGER.info(f"Loaded {volume.dtype.name} volume {volume.dims} from {path}")
    return volume


def write_volume(v: Volume3D, path: Path) -> None:
    raw = encode_volume(v)
    try:
        Path(path).write_bytes(raw)
    except OSError as exc:
        raise IoFailure(f"Cannot write volume {path}: {exc}") from exc
    LOGGER.info(f"Wrote {v.dtype.name} volume {v.dims} to {path} ({len(raw)} bytes)")


def get_slice(v: Volume3D, z: int) -> Slice2D:
    if not 0 <= z < v.dims[0]:
        raise IndexOutOfRange(f"Slice {z} out of range for {v.dims[0]} slices")
    return Slice2D(data=v.data[z], dtype=v.dtype, num_classes=v.num_classes)


def to_gray_bytes(s: Slice2D) -> np.ndarray:
    """Map a slice to 0..255; scalar slices are min-max rescaled, constant ones map to 0."""
    if s.dtype is VolumeDType.U8Label:
        return s.data.astype(np.uint8)
    values = s.data.astype(np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros(s.dims, dtype=np.uint8)
    return np.rint((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_pgm(s: Slice2D, path: Path) -> None:
    pixels = to_gray_bytes(s)
    try:
        Image.fromarray(pixels).save(Path(path), format="PPM")
    except OSError as exc:
        raise IoFailure(f"Cannot write PGM {path}: {exc}") from exc
    LOGGER.debug(f"Wrote PGM {s.dims} to {path}")


def import_pgm(path: Path, num_classes: int | None = None) -> Slice2D:
    """Read a binary 8-bit graymap (P5, maxval 255) as a label slice."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"Cannot read PGM {path}: {exc}") from exc

    header = PGM_HEADER.match(raw)
    if header is None:
        raise BadPgmHeader(f"Cannot parse PGM header of {path}")
    magic, maxval = header.group(1), int(header.group(4))
    if magic != b"P5":
        raise BadPgmHeader(f"{path} has magic {magic!r}, only binary P5 graymaps are supported")
    if maxval != 255:
        raise BadPgmHeader(f"{path} has maxval {maxval}, expected 255")

    try:
        with Image.open(io.BytesIO(raw), formats=["PPM"]) as image:
            pixels = np.asarray(image, dtype=np.uint8)
    except (UnidentifiedImageError, SyntaxError) as exc:
        raise BadPgmHeader(f"Cannot parse PGM header of {path}") from exc
    except OSError as exc:
        raise TruncatedFile(f"PGM pixel data of {path} is incomplete") from exc
    return Slice2D.labels(pixels, num_classes)
