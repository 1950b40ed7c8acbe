import logging
import struct
from pathlib import Path

import numpy as np

from pyvolseg.autodiff.tensor import Tensor
from pyvolseg.errors import BadMagic, CorruptEntry, IoFailure, MissingPretrained
from pyvolseg.models.nets import PartialLoadReport
from pyvolseg.networks.params import ModelParams

LOGGER = logging.getLogger(__name__)

MAGIC = b"UNCK1\n"


def encode_checkpoint(params: ModelParams) -> bytes:
    # layout, little-endian:
    # - magic "UNCK1\n", uint32 entry count
    # - per entry: uint16 name length, name (utf-8), uint8 rank, rank x uint32 dims, float32 payload
    chunks = [MAGIC, struct.pack("<I", len(params))]
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", tensor.data.ndim))
        chunks.append(np.array(tensor.shape, dtype="<u4").tobytes())
        chunks.append(tensor.data.astype("<f4").tobytes())
    return b"".join(chunks)


def decode_checkpoint(raw: bytes) -> ModelParams:
    if raw[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"Not a UNCK1 checkpoint (magic {raw[:len(MAGIC)]!r})")
    offset = len(MAGIC)

    def take(size: int, what: str) -> bytes:
        nonlocal offset
        if offset + size > len(raw):
            raise CorruptEntry(f"Checkpoint ends inside {what} at byte {offset}")
        chunk = raw[offset : offset + size]
        offset += size
        return chunk

    (count,) = struct.unpack("<I", take(4, "the entry count"))
    params = ModelParams()
    for index in range(count):
        (name_length,) = struct.unpack("<H", take(2, f"entry {index}"))
        try:
            name = take(name_length, f"entry {index} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptEntry(f"Entry {index} has an undecodable name") from exc
        (rank,) = struct.unpack("<B", take(1, f"{name} rank"))
        dims = tuple(int(d) for d in np.frombuffer(take(4 * rank, f"{name} dims"), dtype="<u4"))
        size = int(np.prod(dims, dtype=np.int64))
        payload = np.frombuffer(take(4 * size, f"{name} payload"), dtype="<f4")
        if not np.isfinite(payload).all():
            raise CorruptEntry(f"{name} holds NaN or Inf values")
        if name in params:
            raise CorruptEntry(f"Duplicate entry {name}")
        params.add(name, Tensor(payload.reshape(dims).astype(np.float32), requires_grad=True))
    if offset != len(raw):
        raise CorruptEntry(f"{len(raw) - offset} unexpected bytes after the last entry")
    return params


def save_checkpoint(params: ModelParams, path: Path) -> None:
    raw = encode_checkpoint(params)
    try:
        Path(path).write_bytes(raw)
    except OSError as exc:
        raise IoFailure(f"Cannot write checkpoint {path}: {exc}") from exc
    LOGGER.debug(f"Saved {len(params)} tensors to {path}")


def load_checkpoint(path: Path) -> ModelParams:
    path = Path(path)
    if not path.is_file():
        raise MissingPretrained(f"Checkpoint {path} does not exist")
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"Cannot read checkpoint {path}: {exc}") from exc
    params = decode_checkpoint(raw)
    LOGGER.info(f"Loaded {len(params)} tensors ({params.num_parameters()} values) from {path}")
    return params


def load_checkpoint_partial(
    path: Path, target: ModelParams
) -> tuple[ModelParams, PartialLoadReport]:
    """Copy every checkpoint tensor whose name and shape match the target; keep the rest of the target."""
    source = load_checkpoint(path)
    result = target.copy()
    transferred, reinitialized = [], []
    for name in target:
        if name in source and source[name].shape == target[name].shape:
            result[name] = Tensor(source[name].data.copy(), requires_grad=True)
            transferred.append(name)
        else:
            reinitialized.append(name)
    ignored = [name for name in source if name not in target]
    report = PartialLoadReport(
        transferred=transferred, reinitialized=reinitialized, ignored=ignored
    )
    LOGGER.info(
        f"Partial load from {path}: {len(transferred)} transferred, "
        f"reinitialized {reinitialized or 'none'}"
    )
    return result, report
