"""360°-preserving augmentation of equirectangular images and label maps.

Geometric operations move image and labels together; photometric ones
(blur, noise) only touch the image. Filters and resampling wrap
horizontally and replicate vertically, so nothing introduces a seam.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import GridShape, SphereGrid, sphere_to_continuous

BLUR_RANGE = (0.0, 2.0)
NOISE_RANGE = (0.0, 20.0)
STRETCH_RANGE = (0.5, 2.0)

_SNAP = 1e-9


def _like(result: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Cast float results back to the template dtype (rounding integers)."""
    if np.issubdtype(template.dtype, np.integer):
        info = np.iinfo(template.dtype)
        return np.clip(np.rint(result), info.min, info.max).astype(template.dtype)
    return result.astype(template.dtype, copy=False)


def _gaussian_taps(sigma: float) -> np.ndarray:
    r = int(math.ceil(3.0 * sigma))
    t = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, truncated at 3 sigma."""
    if sigma < 0:
        raise ValueError("blur sigma must be non-negative")
    if sigma == 0:
        return image.copy()
    taps = _gaussian_taps(sigma)
    r = len(taps) // 2
    h, w = image.shape[:2]
    src = image.astype(np.float64)
    cols = np.arange(w)
    out = np.zeros_like(src)
    for t, k in zip(range(-r, r + 1), taps):
        out += k * src[:, (cols + t) % w]
    src, out = out, np.zeros_like(src)
    rows = np.arange(h)
    for t, k in zip(range(-r, r + 1), taps):
        out += k * src[np.clip(rows + t, 0, h - 1)]
    return _like(out, image)


def gaussian_noise(image: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    """Add i.i.d. ``N(0, sigma^2)`` noise and clip to ``[0, 255]``."""
    if sigma < 0:
        raise ValueError("noise sigma must be non-negative")
    if sigma == 0:
        return image.copy()
    rng = np.random.default_rng(seed)
    noisy = image.astype(np.float64) + rng.normal(0.0, sigma, image.shape)
    return _like(np.clip(noisy, 0.0, 255.0), image)


def hflip(image: np.ndarray, labels: np.ndarray):
    return image[:, ::-1].copy(), labels[:, ::-1].copy()


def roll(image: np.ndarray, labels: np.ndarray, shift: int):
    """Move column ``j`` to ``(j + shift) mod w``."""
    w = image.shape[1]
    if not 0 <= shift < w:
        raise ValueError(f"roll shift must be in [0, {w}), got {shift}")
    return np.roll(image, shift, axis=1), np.roll(labels, shift, axis=1)


def crop_mirror(image: np.ndarray, labels: np.ndarray, offset: int):
    """Half-width crop starting at ``offset`` (wrapping), followed by its mirror."""
    w = image.shape[1]
    if w % 2:
        raise ValueError("crop & mirror needs an even width")
    if not 0 <= offset < w:
        raise ValueError(f"crop offset must be in [0, {w}), got {offset}")
    cols = (offset + np.arange(w // 2)) % w
    cols = np.concatenate([cols, cols[::-1]])
    return image[:, cols], labels[:, cols]


def stretch_source(shape: GridShape, kx: float, ky: float):
    """Continuous source coordinates ``(u, v)`` sampled by each output pixel."""
    if kx <= 0 or ky <= 0:
        raise ValueError("stretch factors must be positive")
    X = SphereGrid.build(shape).coords
    Xs = np.stack([X[:, 0] / kx, X[:, 1] / ky, X[:, 2]], axis=1)
    Xs /= np.linalg.norm(Xs, axis=1, keepdims=True)
    u, v = sphere_to_continuous(Xs, shape)
    # land exactly on pixel centres when rounding error is all that separates them
    for a in (u, v):
        near = np.rint(a)
        snap = np.abs(a - near) < _SNAP
        a[snap] = near[snap]
    return u.reshape(shape.h, shape.w), v.reshape(shape.h, shape.w)


def bilinear_wrap(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample ``image`` at ``(u, v)``; wraps horizontally, clamps vertically."""
    h, w = image.shape[:2]
    v = np.clip(v, 0.0, h - 1.0)
    u0, v0 = np.floor(u), np.floor(v)
    fu, fv = u - u0, v - v0
    j0 = u0.astype(np.int64) % w
    j1 = (j0 + 1) % w
    i0 = v0.astype(np.int64)
    i1 = np.minimum(i0 + 1, h - 1)
    src = image.astype(np.float64)
    if src.ndim == 3:
        fu, fv = fu[..., None], fv[..., None]
    top = (1.0 - fu) * src[i0, j0] + fu * src[i0, j1]
    bottom = (1.0 - fu) * src[i1, j0] + fu * src[i1, j1]
    return (1.0 - fv) * top + fv * bottom


def nearest_wrap(labels: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = labels.shape[:2]
    j = np.floor(u + 0.5).astype(np.int64) % w
    i = np.clip(np.floor(v + 0.5).astype(np.int64), 0, h - 1)
    return labels[i, j]


def pano_stretch(image: np.ndarray, labels: np.ndarray, kx: float, ky: float):
    """Panoramic stretch by inverse warping.

    Each output pixel samples the source at its sphere point with x and y
    divided by ``kx`` and ``ky``; factors below 1 magnify the areas where
    ``|x|`` (resp. ``|y|``) is close to 1.
    """
    u, v = stretch_source(GridShape.of(image), kx, ky)
    return _like(bilinear_wrap(image, u, v), image), nearest_wrap(labels, u, v)


@dataclass
class AugmentSpec:
    blur_sigma: float = 0.0
    noise_sigma: float = 0.0
    flip: bool = False
    roll: int = 0
    crop_mirror: bool = False
    crop_offset: int = 0
    kx: float = 1.0
    ky: float = 1.0
    seed: int = 0

    def validate(self, width: int | None = None) -> None:
        def check(name, value, lo, hi):
            if not lo <= value <= hi:
                raise ValueError(f"{name}={value} outside [{lo}, {hi}]")

        check("blur_sigma", self.blur_sigma, *BLUR_RANGE)
        check("noise_sigma", self.noise_sigma, *NOISE_RANGE)
        check("kx", self.kx, *STRETCH_RANGE)
        check("ky", self.ky, *STRETCH_RANGE)
        if width is not None:
            check("roll", self.roll, 0, width - 1)
            check("crop_offset", self.crop_offset, 0, width - 1)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AugmentSpec":
        return cls(**json.loads(text))

    @classmethod
    def random(cls, rng: np.random.Generator, width: int, p: float = 0.5) -> "AugmentSpec":
        """Draw a training-time spec; stretch factors are log-uniform."""
        lo, hi = np.log(STRETCH_RANGE)
        return cls(
            blur_sigma=float(rng.uniform(*BLUR_RANGE)),
            noise_sigma=float(rng.uniform(*NOISE_RANGE)),
            flip=bool(rng.random() < p),
            roll=int(rng.integers(width)) if rng.random() < p else 0,
            crop_mirror=bool(rng.random() < p),
            crop_offset=int(rng.integers(width)),
            kx=float(np.exp(rng.uniform(lo, hi))),
            ky=float(np.exp(rng.uniform(lo, hi))),
            seed=int(rng.integers(2**31)),
        )


def compose_augmentations(spec: AugmentSpec, image: np.ndarray, labels: np.ndarray):
    """Apply stretch, crop & mirror, roll, flip, blur, noise, in that order."""
    spec.validate(image.shape[1])
    if spec.kx != 1.0 or spec.ky != 1.0:
        image, labels = pano_stretch(image, labels, spec.kx, spec.ky)
    if spec.crop_mirror:
        image, labels = crop_mirror(image, labels, spec.crop_offset)
    if spec.roll:
        image, labels = roll(image, labels, spec.roll)
    if spec.flip:
        image, labels = hflip(image, labels)
    image = gaussian_blur(image, spec.blur_sigma)
    image = gaussian_noise(image, spec.noise_sigma, spec.seed)
    return image, labels
