"""Equirectangular <-> unit-sphere coordinates.

Pixel ``(j, i)`` is column ``j`` and row ``i``. Angles are sampled at pixel
centres::

    phi   = (i + 0.5) * pi / h          (polar, 0 at the north pole)
    theta = (j + 0.5) * 2 * pi / w      (azimuth, wraps horizontally)
    X     = (sin phi cos theta, sin phi sin theta, cos phi)

The inverse quantises with ``floor`` so the pair is an exact inverse on
pixel centres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class GridShape:
    """Raster size of an equirectangular image.

    ``nonstandard`` is set when ``w != 2 * h``; every operation still works
    for such shapes.
    """

    h: int
    w: int
    nonstandard: bool = field(init=False)

    def __post_init__(self):
        if int(self.h) != self.h or int(self.w) != self.w:
            raise ValueError(f"grid dimensions must be integers, got {self.h}x{self.w}")
        if self.h < 2 or self.w < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.h}x{self.w}")
        object.__setattr__(self, "nonstandard", self.w != 2 * self.h)

    @property
    def n(self) -> int:
        return self.h * self.w

    @classmethod
    def of(cls, array: np.ndarray) -> "GridShape":
        return cls(int(array.shape[0]), int(array.shape[1]))


@lru_cache(maxsize=32)
def _angle_tables(h: int, w: int):
    # Per-row and per-column trig tables; all coordinates are products of
    # these, which keeps scalar and grid construction bit-identical.
    phi = (np.arange(h, dtype=np.float64) + 0.5) * (math.pi / h)
    theta = (np.arange(w, dtype=np.float64) + 0.5) * (TWO_PI / w)
    tables = (np.sin(phi), np.cos(phi), np.cos(theta), np.sin(theta))
    for t in tables:
        t.setflags(write=False)
    return tables


def pixel_to_sphere(p, shape: GridShape) -> np.ndarray:
    """Map pixel ``p = (j, i)`` to a unit vector ``[x, y, z]``."""
    j, i = p
    if not (0 <= j < shape.w and 0 <= i < shape.h):
        raise ValueError(f"pixel {(j, i)} outside grid {shape.h}x{shape.w}")
    sin_phi, cos_phi, cos_theta, sin_theta = _angle_tables(shape.h, shape.w)
    return np.array([sin_phi[i] * cos_theta[j], sin_phi[i] * sin_theta[j], cos_phi[i]])


def sphere_to_pixel(X, shape: GridShape) -> tuple[int, int]:
    """Map a unit vector to the pixel ``(j, i)`` that contains it."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (3,) or not np.all(np.isfinite(X)):
        raise ValueError(f"expected a finite 3-vector, got {X!r}")
    if abs(float(X @ X) - 1.0) > 2e-6:
        raise ValueError(f"point {X!r} is not unit-norm")
    j, i = sphere_to_pixel_array(X[None, :], shape)
    return int(j[0]), int(i[0])


def sphere_to_pixel_array(X: np.ndarray, shape: GridShape):
    """Vectorised :func:`sphere_to_pixel` for an ``(..., 3)`` array.

    Returns integer arrays ``(j, i)``.
    """
    theta, phi = _angles(X)
    j = np.clip(np.floor(theta * shape.w / TWO_PI), 0, shape.w - 1).astype(np.int64)
    i = np.clip(np.floor(phi * shape.h / math.pi), 0, shape.h - 1).astype(np.int64)
    return j, i


def sphere_to_continuous(X: np.ndarray, shape: GridShape):
    """Continuous pixel coordinates ``(u, v)`` of unit vectors.

    Integer ``(u, v)`` values are pixel centres, so ``u = theta*w/2pi - 0.5``.
    """
    theta, phi = _angles(X)
    return theta * shape.w / TWO_PI - 0.5, phi * shape.h / math.pi - 0.5


def _angles(X):
    X = np.asarray(X, dtype=np.float64)
    theta = np.arctan2(X[..., 1], X[..., 0])
    theta = np.where(theta < 0.0, theta + TWO_PI, theta)
    phi = np.arccos(np.clip(X[..., 2], -1.0, 1.0))
    return theta, phi


def chord_distance(a, b) -> float:
    """Euclidean distance between two points on the unit sphere."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.sqrt(d @ d))


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Unit-sphere coordinates of every pixel, row-major ``(h*w, 3)``."""

    shape: GridShape
    coords: np.ndarray

    @classmethod
    def build(cls, shape: GridShape) -> "SphereGrid":
        return _build_grid(shape.h, shape.w)

    @property
    def image(self) -> np.ndarray:
        """Coordinates as an ``(h, w, 3)`` raster view."""
        return self.coords.reshape(self.shape.h, self.shape.w, 3)

    def coord(self, j: int, i: int) -> np.ndarray:
        return self.coords[i * self.shape.w + j]


@lru_cache(maxsize=16)
def _build_grid(h: int, w: int) -> SphereGrid:
    sin_phi, cos_phi, cos_theta, sin_theta = _angle_tables(h, w)
    coords = np.empty((h, w, 3))
    coords[..., 0] = sin_phi[:, None] * cos_theta[None, :]
    coords[..., 1] = sin_phi[:, None] * sin_theta[None, :]
    coords[..., 2] = cos_phi[:, None]
    coords = coords.reshape(h * w, 3)
    coords.setflags(write=False)
    return SphereGrid(GridShape(h, w), coords)


def pixel_solid_angle(shape: GridShape) -> np.ndarray:
    """Approximate solid angle of each pixel, shape ``(h, w)``."""
    sin_phi = _angle_tables(shape.h, shape.w)[0]
    cell = (math.pi / shape.h) * (TWO_PI / shape.w)
    return np.broadcast_to((sin_phi * cell)[:, None], (shape.h, shape.w))
