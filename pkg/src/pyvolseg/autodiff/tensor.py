import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from pyvolseg.errors import NonFiniteError, NonScalarOutput

LOGGER = logging.getLogger(__name__)

# execution order of every recorded op
_SEQUENCE = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple["Tensor", ...]
    backward: BackwardFn
    seq: int


class Tensor:
    """Dense float array that records the ops producing it when gradients are required."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        array = np.asarray(data)
        if dtype is None:
            dtype = array.dtype if array.dtype in (np.float32, np.float64) else np.float32
        array = np.ascontiguousarray(array, dtype=dtype)
        if not np.isfinite(array).all():
            raise NonFiniteError("Tensor data contains NaN or Inf")
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise NonScalarOutput(f"Tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def backward(self) -> None:
        if self.size != 1:
            raise NonScalarOutput(f"backward() needs a scalar, got shape {self.shape}")
        Graph.from_output(self).backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def from_op(
    data: np.ndarray, op: str, inputs: Sequence[Tensor], backward: BackwardFn
) -> Tensor:
    """Wrap an op result; a node is recorded only when some input needs gradients."""
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced NaN or Inf")
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad, dtype=data.dtype)
    if needs_grad:
        out._node = Node(op=op, inputs=tuple(inputs), backward=backward, seq=next(_SEQUENCE))
    return out


@dataclass
class Graph:
    """Recorded ops reachable from one output, in execution order."""

    nodes: list[tuple[Tensor, Node]]

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        seen: set[int] = set()
        found: list[Tensor] = []
        stack = [output]
        while stack:
            tensor = stack.pop()
            if id(tensor) in seen or tensor._node is None:
                continue
            seen.add(id(tensor))
            found.append(tensor)
            stack.extend(tensor._node.inputs)
        found.sort(key=lambda t: t._node.seq)  # type: ignore[union-attr]
        return cls(nodes=[(t, t._node) for t in found])  # type: ignore[misc]

    def backward(self, output: Tensor) -> None:
        seed = np.ones(output.shape, dtype=np.float64)
        if output._node is None:
            if output.requires_grad:
                _accumulate(output, seed)
            return

        pending: dict[int, np.ndarray] = {id(output): seed}
        for tensor, node in reversed(self.nodes):
            grad = pending.pop(id(tensor), None)
            if grad is None:
                continue
            for source, source_grad in zip(node.inputs, node.backward(grad)):
                if source_grad is None or not source.requires_grad:
                    continue
                if not np.isfinite(source_grad).all():
                    raise NonFiniteError(f"Backward of {node.op} produced NaN or Inf")
                if source._node is None:
                    _accumulate(source, source_grad)
                elif id(source) in pending:
                    pending[id(source)] = pending[id(source)] + source_grad
                else:
                    pending[id(source)] = source_grad


def _accumulate(leaf: Tensor, grad: np.ndarray) -> None:
    grad = np.asarray(grad, dtype=leaf.dtype).reshape(leaf.shape)
    leaf.grad = grad.copy() if leaf.grad is None else leaf.grad + grad
