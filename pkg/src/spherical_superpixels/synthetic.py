"""Synthetic test images.

Band images are split by ``nlat`` latitude bands and ``nlon`` meridian
sectors into ``nlat * nlon`` classes. Band edges are jittered and the
sectors get a random azimuthal offset, every class gets a random colour,
and Gaussian noise is added per channel. Smooth images are seamless random
colour fields without ground truth.
"""

from __future__ import annotations

import math

import numpy as np

from .augment import gaussian_blur
from .geometry import GridShape


def band_image(shape: GridShape, nlat: int, nlon: int, noise: float, rng: np.random.Generator):
    """Return ``(rgb uint8 (h, w, 3), gt int (h, w))``."""
    if nlat < 1 or nlon < 1:
        raise ValueError("need at least one band in each direction")
    h, w = shape.h, shape.w
    step = math.pi / nlat
    edges = step * np.arange(1, nlat) + rng.uniform(-0.25, 0.25, nlat - 1) * step
    offset = rng.uniform(0.0, 2 * math.pi / nlon)

    phi = (np.arange(h) + 0.5) * (math.pi / h)
    theta = (np.arange(w) + 0.5) * (2 * math.pi / w)
    band = np.searchsorted(edges, phi)
    sector = np.floor(((theta - offset) % (2 * math.pi)) / (2 * math.pi / nlon)).astype(int)
    sector = np.minimum(sector, nlon - 1)
    gt = band[:, None] * nlon + sector[None, :]

    colors = rng.integers(0, 256, size=(nlat * nlon, 3)).astype(np.float64)
    image = colors[gt]
    if noise > 0:
        image = image + rng.normal(0.0, noise, image.shape)
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    return image, gt.astype(np.int64)


def band_dataset(count: int, shape: GridShape, nlat: int = 2, nlon: int = 3, noise: float = 10.0, seed: int = 0):
    """``count`` independent band images from one seed."""
    rng = np.random.default_rng(seed)
    return [band_image(shape, nlat, nlon, noise, rng) for _ in range(count)]


def smooth_image(shape: GridShape, rng: np.random.Generator, sigma: float = 4.0) -> np.ndarray:
    """Seamless low-frequency random colour field stretched to the full 0-255 range."""
    field = gaussian_blur(rng.normal(size=(shape.h, shape.w, 3)), sigma)
    field = (field - field.min()) / (field.max() - field.min())
    return np.rint(255 * field).astype(np.uint8)
