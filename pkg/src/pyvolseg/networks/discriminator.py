import logging

import numpy as np

from pyvolseg.autodiff.ops import conv2d, global_avg_pool, leaky_relu
from pyvolseg.autodiff.tensor import Tensor
from pyvolseg.errors import BadConfig, NotAProbabilityMap, ShapeMismatch
from pyvolseg.models.nets import DiscConfig
from pyvolseg.networks.params import ModelParams, he_normal

LOGGER = logging.getLogger(__name__)

PROBABILITY_TOLERANCE = 1e-4


def build_discriminator(cfg: DiscConfig, seed: int) -> ModelParams:
    if cfg.in_channels < 2 or not cfg.channels or min(cfg.channels) < 1:
        raise BadConfig(f"Invalid discriminator configuration {cfg}")
    rng = np.random.default_rng(seed)
    params = ModelParams()
    in_ch = cfg.in_channels
    for i, out_ch in enumerate(cfg.channels):
        params.add(f"conv{i}.w", Tensor(he_normal(rng, (out_ch, in_ch, 3, 3)), requires_grad=True))
        params.add(f"conv{i}.b", Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True))
        in_ch = out_ch
    head = (rng.standard_normal((1, in_ch, 1, 1)) * cfg.head_std).astype(np.float32)
    params.add("head.w", Tensor(head, requires_grad=True))
    params.add("head.b", Tensor(np.zeros(1, dtype=np.float32), requires_grad=True))
    return params


def disc_layers(params: ModelParams) -> int:
    return sum(1 for name in params if name.startswith("conv") and name.endswith(".w"))


def disc_forward(params: ModelParams, prob_map: Tensor, slope: float = 0.2) -> Tensor:
    """One logit (N, 1, 1, 1) per map: positive means "looks like a real label map"."""
    layers = disc_layers(params)
    min_size = 2**layers
    if prob_map.data.ndim != 4:
        raise ShapeMismatch(f"Discriminator input must be NCHW, got {prob_map.shape}")
    if prob_map.shape[1] != params["conv0.w"].shape[1]:
        raise ShapeMismatch(
            f"Discriminator expects {params['conv0.w'].shape[1]} channels, got {prob_map.shape[1]}"
        )
    if prob_map.shape[2] < min_size or prob_map.shape[3] < min_size:
        raise ShapeMismatch(
            f"Discriminator input must be at least {min_size}x{min_size}, got {prob_map.shape[2:]}"
        )
    sums = prob_map.data.sum(axis=1, dtype=np.float64)
    if (prob_map.data < -PROBABILITY_TOLERANCE).any() or (
        np.abs(sums - 1.0) > PROBABILITY_TOLERANCE
    ).any():
        raise NotAProbabilityMap("Channels of the discriminator input must sum to 1")

    h = prob_map
    for i in range(layers):
        h = leaky_relu(conv2d(h, params[f"conv{i}.w"], params[f"conv{i}.b"], stride=2), slope)
    h = global_avg_pool(h)
    return conv2d(h, params["head.w"], params["head.b"], pad="valid")
