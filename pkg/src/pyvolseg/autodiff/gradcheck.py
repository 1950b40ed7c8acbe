"""Central finite-difference verification of the analytic gradients.

A coordinate whose perturbation flips a branch decision (a ReLU sign or a
max-pool winner) straddles a kink; its difference quotient is retried with
smaller steps and skipped if the kink persists.
"""

import logging
from typing import Callable

import numpy as np

from pyvolseg.autodiff.losses import bce_with_logits, weighted_cross_entropy
from pyvolseg.autodiff.ops import (
    concat_channels,
    conv2d,
    global_avg_pool,
    leaky_relu,
    maxpool2d,
    record_branches,
    relu,
    sigmoid,
    softmax_channels,
    upsample_nn,
    weighted_sum,
)
from pyvolseg.autodiff.tensor import Tensor
from pyvolseg.errors import NonScalarOutput
from pyvolseg.models.nets import DiscConfig, UNetConfig
from pyvolseg.networks.discriminator import build_discriminator, disc_forward
from pyvolseg.networks.params import ModelParams
from pyvolseg.networks.unet import build_unet, unet_forward

LOGGER = logging.getLogger(__name__)

GraphBuilder = Callable[[ModelParams], Tensor]

PASS_THRESHOLD = 1e-4
KINK_RETRY_FACTORS = (1.0, 0.1, 0.01)


def _evaluate(f: GraphBuilder, params: ModelParams) -> tuple[float, list[bytes]]:
    with record_branches() as branches:
        out = f(params)
    if out.size != 1:
        raise NonScalarOutput(f"Checked function must be scalar, got shape {out.shape}")
    return out.item(), branches


def _central_difference(
    f: GraphBuilder, params: ModelParams, flat: np.ndarray, i: int, h: float, reference: list[bytes]
) -> float | None:
    for step in (h * factor for factor in KINK_RETRY_FACTORS):
        original = flat[i]
        flat[i] = original + step
        plus, plus_branches = _evaluate(f, params)
        flat[i] = original - step
        minus, minus_branches = _evaluate(f, params)
        flat[i] = original
        if plus_branches == reference and minus_branches == reference:
            return (plus - minus) / (2.0 * step)
    return None


def grad_check(
    f: GraphBuilder,
    params: ModelParams,
    h: float = 1e-3,
    coords_per_param: int = 50,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients, at float64."""
    checked = params.astype(np.float64)
    for _, tensor in checked.items():
        tensor.requires_grad = True
    out = f(checked)
    if out.size != 1:
        raise NonScalarOutput(f"Checked function must be scalar, got shape {out.shape}")
    out.backward()
    _, reference = _evaluate(f, checked)

    rng = np.random.default_rng(seed)
    worst = 0.0
    skipped = 0
    for name, tensor in checked.items():
        analytic = (
            tensor.grad.reshape(-1) if tensor.grad is not None else np.zeros(tensor.size)
        )
        flat = tensor.data.reshape(-1)
        if tensor.size <= coords_per_param:
            coords = np.arange(tensor.size)
        else:
            coords = np.sort(rng.choice(tensor.size, coords_per_param, replace=False))
        for i in coords:
            numeric = _central_difference(f, checked, flat, int(i), h, reference)
            if numeric is None:
                skipped += 1
                continue
            a = float(analytic[i])
            error = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, error)
    if skipped:
        LOGGER.debug(f"Skipped {skipped} coordinates sitting on a kink")
    return worst


def _family_checks(rng: np.random.Generator) -> dict[str, tuple[GraphBuilder, ModelParams]]:
    def normal(*shape: int) -> Tensor:
        return Tensor(rng.standard_normal(shape), dtype=np.float64)

    def params(**entries: Tensor) -> ModelParams:
        return ModelParams(entries.items())

    def project(t: Tensor, r: np.ndarray) -> Tensor:
        return weighted_sum(t, r)

    checks: dict[str, tuple[GraphBuilder, ModelParams]] = {}

    r_conv = rng.standard_normal((2, 3, 6, 6))
    checks["conv2d"] = (
        lambda p: project(conv2d(p["x"], p["w"], p["b"]), r_conv),
        params(x=normal(2, 2, 6, 6), w=normal(3, 2, 3, 3), b=normal(3)),
    )
    r_stride = rng.standard_normal((1, 3, 3, 3))
    checks["conv2d_stride2"] = (
        lambda p: project(conv2d(p["x"], p["w"], p["b"], stride=2), r_stride),
        params(x=normal(1, 2, 6, 6), w=normal(3, 2, 3, 3), b=normal(3)),
    )
    r_pool = rng.standard_normal((2, 2, 3, 3))
    checks["maxpool2d"] = (
        lambda p: project(maxpool2d(p["x"]), r_pool),
        params(x=normal(2, 2, 6, 6)),
    )
    r_up = rng.standard_normal((1, 2, 8, 8))
    checks["upsample_nn"] = (
        lambda p: project(upsample_nn(p["x"], 2), r_up),
        params(x=normal(1, 2, 4, 4)),
    )
    r_cat = rng.standard_normal((1, 5, 4, 4))
    checks["concat_channels"] = (
        lambda p: project(concat_channels(p["a"], p["b"]), r_cat),
        params(a=normal(1, 2, 4, 4), b=normal(1, 3, 4, 4)),
    )
    r_act = rng.standard_normal((1, 3, 5, 5))
    checks["relu"] = (lambda p: project(relu(p["x"]), r_act), params(x=normal(1, 3, 5, 5)))
    checks["leaky_relu"] = (
        lambda p: project(leaky_relu(p["x"], 0.2), r_act),
        params(x=normal(1, 3, 5, 5)),
    )
    checks["sigmoid"] = (
        lambda p: project(sigmoid(p["x"]), r_act),
        params(x=normal(1, 3, 5, 5)),
    )
    checks["softmax_channels"] = (
        lambda p: project(softmax_channels(p["x"]), r_act),
        params(x=normal(1, 3, 5, 5)),
    )
    r_gap = rng.standard_normal((2, 3, 1, 1))
    checks["global_avg_pool"] = (
        lambda p: project(global_avg_pool(p["x"]), r_gap),
        params(x=normal(2, 3, 4, 4)),
    )
    targets = rng.integers(0, 3, size=(2, 4, 4))
    weights = rng.uniform(0.05, 2.0, size=(2, 4, 4))
    checks["weighted_cross_entropy"] = (
        lambda p: weighted_cross_entropy(p["logits"], targets, weights),
        params(logits=normal(2, 3, 4, 4)),
    )
    bce_targets = rng.integers(0, 2, size=(4, 1, 1, 1)).astype(np.float64)
    checks["bce_with_logits"] = (
        lambda p: bce_with_logits(p["logits"], bce_targets),
        params(logits=normal(4, 1, 1, 1)),
    )

    unet = build_unet(UNetConfig(num_classes=2, depth=2, base_channels=4), seed=int(rng.integers(2**31)))
    unet.add("x", Tensor(rng.uniform(0.0, 1.0, size=(1, 1, 16, 16))))
    unet_targets = rng.integers(0, 2, size=(1, 16, 16))
    unet_weights = rng.uniform(0.05, 2.0, size=(1, 16, 16))
    checks["unet+weighted_cross_entropy"] = (
        lambda p: weighted_cross_entropy(unet_forward(p, p["x"]), unet_targets, unet_weights),
        unet,
    )

    disc = build_discriminator(DiscConfig(in_channels=2, head_std=1.0), seed=int(rng.integers(2**31)))
    disc.add("logits", Tensor(rng.standard_normal((2, 2, 16, 16))))
    disc_targets = np.array([1.0, 0.0]).reshape(2, 1, 1, 1)
    checks["discriminator+bce"] = (
        lambda p: bce_with_logits(disc_forward(p, softmax_channels(p["logits"])), disc_targets),
        disc,
    )
    return checks


def check_all(seed: int = 42, coords_per_param: int = 50) -> dict[str, float]:
    """Max relative gradient error of every layer family and of the two composed networks."""
    rng = np.random.default_rng(seed)
    results: dict[str, float] = {}
    for family, (f, params) in _family_checks(rng).items():
        results[family] = grad_check(f, params, coords_per_param=coords_per_param, seed=seed)
        LOGGER.info(f"grad-check {family}: max relative error {results[family]:.3e}")
    return results
