import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial.distance import cdist

from pyvolseg.errors import BadConfig
from pyvolseg.models.io import SynthConfig
from pyvolseg.models.shared import Volume3D

LOGGER = logging.getLogger(__name__)

BOUNDARY = 1
# zero-based storage of the four EM classes: glia, boundary, cytoplasm, mitochondria
GLIA, CYTOPLASM, MITOCHONDRIA = 0, 2, 3
INTERIOR_CYCLE = np.array([CYTOPLASM, MITOCHONDRIA, GLIA], dtype=np.uint8)

BASE_INTENSITY = np.array([0.8, 0.15, 0.65, 0.4], dtype=np.float64)  # indexed by class

STYLE_CODE = {"source": 0, "target": 1}


def slice_geometry(
    shape: tuple[int, int], n_seeds: int, thickness: float, rng: np.random.Generator
) -> np.ndarray:
    """Four-class label plane of one slice from a nearest-seed partition."""
    h, w = shape
    seeds = rng.uniform((0.0, 0.0), (h, w), size=(n_seeds, 2))
    rows, cols = np.mgrid[0:h, 0:w]
    pixels = np.column_stack([rows.ravel(), cols.ravel()]).astype(np.float64)
    distances = cdist(pixels, seeds)
    order = np.argsort(distances, axis=1, kind="stable")[:, :2]
    nearest, second = order[:, 0], order[:, 1]
    d0 = np.take_along_axis(distances, order[:, :1], axis=1)[:, 0]
    d1 = np.take_along_axis(distances, order[:, 1:], axis=1)[:, 0]
    # perpendicular distance to the bisector of the two nearest seeds
    spacing = np.linalg.norm(seeds[second] - seeds[nearest], axis=1)
    offset = (d1**2 - d0**2) / (2.0 * np.maximum(spacing, 1e-12))
    boundary = offset < thickness / 2.0
    labels = np.where(boundary, BOUNDARY, INTERIOR_CYCLE[nearest % 3])
    return labels.reshape(h, w).astype(np.uint8)


def slice_image(
    four_class: np.ndarray, cfg: SynthConfig, rng: np.random.Generator
) -> np.ndarray:
    image = BASE_INTENSITY[four_class]
    noise_sigma = cfg.noise_sigma
    if cfg.style == "target":
        # varying intensity across slices, coarser texture, more noise
        gain = rng.uniform(0.6, 1.4)
        bias = rng.uniform(-0.15, 0.15)
        texture = gaussian_filter(rng.standard_normal(four_class.shape), 4.0, mode="nearest")
        texture /= max(float(texture.std()), 1e-12)
        image = gain * image + bias + 0.08 * texture
        noise_sigma *= 2.0
    image = image + noise_sigma * rng.standard_normal(four_class.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def generate(cfg: SynthConfig) -> tuple[Volume3D, Volume3D]:
    """Paired (image, label) volumes; labels depend only on the seed, never on the style."""
    z_dim, h, w = cfg.dims
    if cfg.seeds_per_slice > h * w:
        raise BadConfig(f"{cfg.seeds_per_slice} seed points do not fit a {h}x{w} slice")

    def one(z: int) -> tuple[np.ndarray, np.ndarray]:
        geometry_rng = np.random.default_rng(cfg.seed ^ z)
        photometry_rng = np.random.default_rng([cfg.seed, z, STYLE_CODE[cfg.style]])
        four_class = slice_geometry((h, w), cfg.seeds_per_slice, cfg.thickness, geometry_rng)
        image = slice_image(four_class, cfg, photometry_rng)
        if cfg.class_mode == "binary":
            labels = (four_class == BOUNDARY).astype(np.uint8)
        else:
            labels = four_class
        return image, labels

    with ThreadPoolExecutor(max_workers=4) as pool:
        planes = list(pool.map(one, range(z_dim)))

    images = Volume3D.scalars(np.stack([p[0] for p in planes]))
    labels = Volume3D.labels(np.stack([p[1] for p in planes]), cfg.num_classes)
    boundary_fraction = float((np.stack([p[1] for p in planes]) == BOUNDARY).mean())
    LOGGER.info(
        f"Generated {cfg.style}-style {cfg.class_mode} volume {cfg.dims}, "
        f"boundary fraction {boundary_fraction:.3f}"
    )
    return images, labels
