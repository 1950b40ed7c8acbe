import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from pyvolseg.errors import MissingGradient
from pyvolseg.models.io import OptimizerKind

if TYPE_CHECKING:
    from pyvolseg.networks.params import ModelParams

LOGGER = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    kind: OptimizerKind
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: "ModelParams", state: OptimizerState) -> None:
    """Update every trainable tensor from its gradient, then clear the gradients."""
    trainable = [(name, t) for name, t in params.items() if t.requires_grad]
    missing = [name for name, t in trainable if t.grad is None]
    if missing:
        raise MissingGradient(f"No gradient for {', '.join(missing)}")

    state.step += 1
    for name, tensor in trainable:
        grad = tensor.grad.astype(np.float64)  # type: ignore[union-attr]
        if state.kind is OptimizerKind.sgd:
            update = state.lr * grad
        else:
            m = state.first_moment.get(name, np.zeros_like(grad))
            v = state.second_moment.get(name, np.zeros_like(grad))
            m = state.beta1 * m + (1.0 - state.beta1) * grad
            v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
            state.first_moment[name], state.second_moment[name] = m, v
            m_hat = m / (1.0 - state.beta1**state.step)
            v_hat = v / (1.0 - state.beta2**state.step)
            update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        tensor.data = (tensor.data.astype(np.float64) - update).astype(tensor.dtype)
        tensor.grad = None
