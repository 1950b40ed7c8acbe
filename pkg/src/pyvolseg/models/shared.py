import enum
from dataclasses import dataclass

import numpy as np

from pyvolseg.errors import InvariantViolation, LabelOutOfRange


class VolumeDType(enum.Enum):
    U8Label = 0
    F32Scalar = 1


NUMPY_DTYPE: dict[VolumeDType, np.dtype] = {
    VolumeDType.U8Label: np.dtype(np.uint8),
    VolumeDType.F32Scalar: np.dtype(np.float32),
}


# volumes store the class count in one header byte, slices only hold u8 labels
MAX_VOLUME_CLASSES = 255
MAX_SLICE_CLASSES = 256


def _frozen_copy(data: np.ndarray, dtype: VolumeDType) -> np.ndarray:
    source = np.asarray(data)
    if dtype is VolumeDType.U8Label and source.dtype != np.uint8 and source.size:
        if source.min() < 0 or source.max() > 255:
            raise LabelOutOfRange("Label values must fit in an unsigned byte")
    array = np.array(source, dtype=NUMPY_DTYPE[dtype], copy=True, order="C")
    array.setflags(write=False)
    return array


def _check_values(
    data: np.ndarray, dtype: VolumeDType, num_classes: int, max_classes: int = MAX_VOLUME_CLASSES
) -> None:
    if dtype is VolumeDType.U8Label:
        if not 1 <= num_classes <= max_classes:
            raise InvariantViolation(
                f"U8Label data needs a class count in [1, {max_classes}], got {num_classes}"
            )
        if data.size and int(data.max()) >= num_classes:
            raise LabelOutOfRange(
                f"Label {int(data.max())} out of range for {num_classes} classes"
            )
    else:
        if num_classes != 0:
            raise InvariantViolation("F32Scalar data must declare class count 0")
        if not np.isfinite(data).all():
            raise InvariantViolation("F32Scalar data contains non-finite values")


def _bitwise_eq(self, other: object) -> bool:
    if type(other) is not type(self):
        return NotImplemented
    return (
        self.dtype is other.dtype
        and self.num_classes == other.num_classes
        and self.data.shape == other.data.shape
        and self.data.tobytes() == other.data.tobytes()
    )


@dataclass(frozen=True, eq=False)
class Slice2D:
    """One (y, x) plane; the processing unit of every 2D operation."""

    data: np.ndarray  # shape (y, x)
    dtype: VolumeDType
    num_classes: int = 0

    def __post_init__(self):
        if np.ndim(self.data) != 2:
            raise InvariantViolation(f"Slice data must be 2D, got {np.ndim(self.data)}D")
        object.__setattr__(self, "data", _frozen_copy(self.data, self.dtype))
        _check_values(self.data, self.dtype, self.num_classes, MAX_SLICE_CLASSES)

    @property
    def dims(self) -> tuple[int, int]:
        return (self.data.shape[0], self.data.shape[1])

    @classmethod
    def labels(cls, data: np.ndarray, num_classes: int | None = None) -> "Slice2D":
        data = np.asarray(data)
        if num_classes is None:
            num_classes = int(data.max()) + 1 if data.size else 1
        return cls(data=data, dtype=VolumeDType.U8Label, num_classes=num_classes)

    @classmethod
    def scalars(cls, data: np.ndarray) -> "Slice2D":
        return cls(data=data, dtype=VolumeDType.F32Scalar)

    __eq__ = _bitwise_eq


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Z×Y×X scalar grid stored row-major (x fastest)."""

    data: np.ndarray  # shape (z, y, x)
    dtype: VolumeDType
    num_classes: int = 0

    def __post_init__(self):
        if np.ndim(self.data) != 3:
            raise InvariantViolation(f"Volume data must be 3D, got {np.ndim(self.data)}D")
        if min(np.shape(self.data)) < 1:
            raise InvariantViolation(f"Volume dims must be positive, got {np.shape(self.data)}")
        object.__setattr__(self, "data", _frozen_copy(self.data, self.dtype))
        self.validate()

    def validate(self) -> None:
        _check_values(self.data, self.dtype, self.num_classes)

    @property
    def dims(self) -> tuple[int, int, int]:
        z, y, x = self.data.shape
        return (z, y, x)

    @classmethod
    def labels(cls, data: np.ndarray, num_classes: int) -> "Volume3D":
        return cls(data=data, dtype=VolumeDType.U8Label, num_classes=num_classes)

    @classmethod
    def scalars(cls, data: np.ndarray) -> "Volume3D":
        return cls(data=data, dtype=VolumeDType.F32Scalar)

    @classmethod
    def from_slices(cls, slices: list[Slice2D]) -> "Volume3D":
        if not slices:
            raise InvariantViolation("Cannot build a volume from zero slices")
        dtypes = {s.dtype for s in slices}
        if len(dtypes) != 1:
            raise InvariantViolation("Slices have mixed dtypes")
        num_classes = max(s.num_classes for s in slices)
        return cls(
            data=np.stack([s.data for s in slices]),
            dtype=slices[0].dtype,
            num_classes=num_classes,
        )

    __eq__ = _bitwise_eq
