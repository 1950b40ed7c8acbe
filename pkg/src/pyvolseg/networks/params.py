import contextlib
import logging
from typing import Iterable, Iterator

import numpy as np

from pyvolseg.autodiff.tensor import Tensor
from pyvolseg.errors import BadConfig

LOGGER = logging.getLogger(__name__)


class ModelParams:
    """Ordered, named collection of trainable tensors."""

    def __init__(self, entries: Iterable[tuple[str, Tensor]] = ()):
        self._entries: dict[str, Tensor] = {}
        for name, tensor in entries:
            self.add(name, tensor)

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self._entries:
            raise BadConfig(f"Duplicate parameter name {name!r}")
        self._entries[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __setitem__(self, name: str, tensor: Tensor) -> None:
        if name not in self._entries:
            raise KeyError(name)
        self._entries[name] = tensor

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._entries.items())

    def num_parameters(self) -> int:
        return sum(t.size for t in self._entries.values())

    def copy(self) -> "ModelParams":
        return self.astype(None)

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            (name, Tensor(t.data.copy(), requires_grad=t.requires_grad, dtype=dtype or t.dtype))
            for name, t in self._entries.items()
        )

    def bitwise_equal(self, other: "ModelParams") -> bool:
        if self.names() != other.names():
            return False
        return all(
            self[name].dtype == other[name].dtype
            and self[name].data.tobytes() == other[name].data.tobytes()
            for name in self
        )


@contextlib.contextmanager
def frozen(*groups: ModelParams) -> Iterator[None]:
    """Disable gradients of every tensor in the groups; restore the flags on exit."""
    saved = [(t, t.requires_grad) for group in groups for _, t in group.items()]
    for tensor, _ in saved:
        tensor.requires_grad = False
    try:
        yield
    finally:
        for tensor, flag in saved:
            tensor.requires_grad = flag


def he_normal(rng: np.random.Generator, shape: tuple[int, int, int, int]) -> np.ndarray:
    """N(0, 2/fan_in) weights for a (Cout, Cin, k, k) kernel."""
    fan_in = shape[1] * shape[2] * shape[3]
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
