"""Encoder-decoder segmentation network with skip connections.

Parameter names: enc{i}.conv1, enc{i}.conv2 for encoder level i, dec{i}.up,
dec{i}.conv1, dec{i}.conv2 for the decoder level joining skip i, and the 1×1
head; each with a ".w" kernel and a ".b" bias.
"""

import logging

import numpy as np

from pyvolseg.autodiff.ops import concat_channels, conv2d, maxpool2d, relu, upsample_nn
from pyvolseg.autodiff.tensor import Tensor
from pyvolseg.errors import BadConfig, ShapeMismatch
from pyvolseg.models.nets import UNetConfig
from pyvolseg.networks.params import ModelParams, he_normal

LOGGER = logging.getLogger(__name__)


def _conv_layers(cfg: UNetConfig) -> list[tuple[str, int, int, int]]:
    """(name, in channels, out channels, kernel) of every convolution, in build order."""
    k = cfg.kernel
    layers = []
    in_ch = cfg.in_channels
    for level in range(cfg.depth):
        c = cfg.channels(level)
        layers.append((f"enc{level}.conv1", in_ch, c, k))
        layers.append((f"enc{level}.conv2", c, c, k))
        in_ch = c
    for level in reversed(range(cfg.depth - 1)):
        c = cfg.channels(level)
        layers.append((f"dec{level}.up", cfg.channels(level + 1), c, k))
        layers.append((f"dec{level}.conv1", 2 * c, c, k))
        layers.append((f"dec{level}.conv2", c, c, k))
    layers.append(("head", cfg.channels(0), cfg.num_classes, 1))
    return layers


def _check(cfg: UNetConfig) -> None:
    if cfg.depth < 1:
        raise BadConfig(f"Depth must be >= 1, got {cfg.depth}")
    if cfg.num_classes < 2:
        raise BadConfig(f"At least two classes are needed, got {cfg.num_classes}")
    if cfg.base_channels < 1 or cfg.in_channels < 1:
        raise BadConfig("Channel counts must be positive")
    if cfg.kernel < 1 or cfg.kernel % 2 == 0:
        raise BadConfig(f"Kernel size must be odd, got {cfg.kernel}")


def build_unet(cfg: UNetConfig, seed: int) -> ModelParams:
    """He-normal kernels, zero biases; the same seed always gives the same parameters."""
    _check(cfg)
    rng = np.random.default_rng(seed)
    params = ModelParams()
    for name, cin, cout, k in _conv_layers(cfg):
        params.add(f"{name}.w", Tensor(he_normal(rng, (cout, cin, k, k)), requires_grad=True))
        params.add(f"{name}.b", Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True))
    LOGGER.debug(f"Built UNet depth={cfg.depth} with {params.num_parameters()} parameters")
    return params


def unet_param_count(cfg: UNetConfig) -> int:
    _check(cfg)
    return sum(k * k * cin * cout + cout for _, cin, cout, k in _conv_layers(cfg))


def unet_depth(params: ModelParams) -> int:
    return sum(1 for name in params if name.startswith("enc") and name.endswith(".conv1.w"))


def unet_config_of(params: ModelParams) -> UNetConfig:
    """Recover the architecture from the parameter shapes."""
    first = params["enc0.conv1.w"].shape
    head = params["head.w"].shape
    return UNetConfig(
        in_channels=first[1],
        num_classes=head[0],
        depth=unet_depth(params),
        base_channels=first[0],
        kernel=first[2],
    )


def _conv(params: ModelParams, name: str, x: Tensor, pad: str = "same") -> Tensor:
    return conv2d(x, params[f"{name}.w"], params[f"{name}.b"], pad=pad)


def unet_forward(params: ModelParams, x: Tensor) -> Tensor:
    """Logits (N, C, H, W) for an (N, Cin, H, W) input."""
    depth = unet_depth(params)
    factor = 2 ** (depth - 1)
    if x.data.ndim != 4:
        raise ShapeMismatch(f"UNet input must be NCHW, got {x.shape}")
    if x.shape[1] != params["enc0.conv1.w"].shape[1]:
        raise ShapeMismatch(
            f"UNet expects {params['enc0.conv1.w'].shape[1]} input channels, got {x.shape[1]}"
        )
    if x.shape[2] % factor or x.shape[3] % factor:
        raise ShapeMismatch(f"Input {x.shape[2]}x{x.shape[3]} is not divisible by {factor}")

    skips: list[Tensor] = []
    h = x
    for level in range(depth):
        h = relu(_conv(params, f"enc{level}.conv1", h))
        h = relu(_conv(params, f"enc{level}.conv2", h))
        if level < depth - 1:
            skips.append(h)
            h = maxpool2d(h)
    for level in reversed(range(depth - 1)):
        h = relu(_conv(params, f"dec{level}.up", upsample_nn(h, 2)))
        h = concat_channels(h, skips[level])
        h = relu(_conv(params, f"dec{level}.conv1", h))
        h = relu(_conv(params, f"dec{level}.conv2", h))
    return _conv(params, "head", h, pad="valid")
