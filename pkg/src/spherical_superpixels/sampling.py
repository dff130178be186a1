"""Superpixel seeding on the sphere.

Seeds come from a Hammersley point set mapped to the sphere with the
equal-area cylindrical projection. The initial label map assigns each pixel
to its nearest seed in 3D, and each superpixel gets a fixed list of its 9
nearest superpixels (itself first), which bounds where its pixels may go
during clustering.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _parallel
from .geometry import SphereGrid

N_NEIGHBORS = 9
MAX_SEEDS = 65535


class EmptySuperpixelError(ValueError):
    """Raised when a superpixel has no member pixels."""

    def __init__(self, index: int):
        super().__init__(f"superpixel {index} has no pixels")
        self.index = index


@dataclass(frozen=True, eq=False)
class SeedSet:
    points: np.ndarray  # (k, 3), unit norm

    @property
    def k(self) -> int:
        return len(self.points)

    def rotated(self, angle: float) -> "SeedSet":
        """Rotate all seeds about the polar axis by ``angle`` radians.

        A horizontal image roll by ``s`` columns corresponds to
        ``angle = 2*pi*s/w``.
        """
        c, s = math.cos(angle), math.sin(angle)
        x, y, z = self.points.T
        return SeedSet(np.stack([c * x - s * y, s * x + c * y, z], axis=1))


def radical_inverse_base2(t: np.ndarray) -> np.ndarray:
    """Van der Corput sequence: reverse the 32 low bits of ``t``."""
    t = np.asarray(t, dtype=np.uint64) & np.uint64(0xFFFFFFFF)
    t = ((t & np.uint64(0x55555555)) << np.uint64(1)) | ((t >> np.uint64(1)) & np.uint64(0x55555555))
    t = ((t & np.uint64(0x33333333)) << np.uint64(2)) | ((t >> np.uint64(2)) & np.uint64(0x33333333))
    t = ((t & np.uint64(0x0F0F0F0F)) << np.uint64(4)) | ((t >> np.uint64(4)) & np.uint64(0x0F0F0F0F))
    t = ((t & np.uint64(0x00FF00FF)) << np.uint64(8)) | ((t >> np.uint64(8)) & np.uint64(0x00FF00FF))
    t = ((t << np.uint64(16)) | (t >> np.uint64(16))) & np.uint64(0xFFFFFFFF)
    return t.astype(np.float64) / 2.0**32


def hammersley_sphere(k: int) -> SeedSet:
    """``k`` near-uniform points on the unit sphere.

    Point ``t`` has ``z = 1 - 2(t + 0.5)/k`` and azimuth
    ``2*pi*radical_inverse(t)``, so the z-coordinates split the sphere into
    equal-area bands.
    """
    if not 1 <= k <= MAX_SEEDS:
        raise ValueError(f"seed count must be in [1, {MAX_SEEDS}], got {k}")
    t = np.arange(k)
    z = 1.0 - 2.0 * (t + 0.5) / k
    theta = 2.0 * math.pi * radical_inverse_base2(t)
    r = np.sqrt(1.0 - z * z)
    return SeedSet(np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1))


def nearest_points(queries: np.ndarray, points: np.ndarray, threads: int | None = None) -> np.ndarray:
    """Index of the nearest ``points`` row for every query (lowest index on ties).

    A KD-tree shortlists candidates; the final choice recomputes squared
    distances explicitly so the tie-break does not depend on the tree.
    """
    k = len(points)
    if k == 1:
        return np.zeros(len(queries), dtype=np.int64)
    tree = cKDTree(points)
    n_short = min(4, k)

    def work(a, b):
        q = queries[a:b]
        _, idx = tree.query(q, k=n_short)
        idx = np.sort(idx, axis=1)
        d = ((q[:, None, :] - points[idx]) ** 2).sum(axis=2)
        return idx[np.arange(len(q)), np.argmin(d, axis=1)]

    return _parallel.concat_map(work, len(queries), threads)


def initial_label_map(seeds: SeedSet, grid: SphereGrid) -> np.ndarray:
    """Label each pixel with its nearest seed; returns an ``(h, w)`` int map."""
    if seeds.k == 0:
        raise ValueError("no seeds")
    labels = nearest_points(grid.coords, seeds.points)
    return labels.reshape(grid.shape.h, grid.shape.w)


def region_means(values: np.ndarray, labels: np.ndarray, k: int, weights=None):
    """Per-label sums and masses of ``values`` (``(N, D)``).

    Returns ``(means, mass)``; rows with zero mass are NaN.
    """
    labels = np.asarray(labels).ravel()
    values = np.asarray(values, dtype=np.float64).reshape(len(labels), -1)
    mass = np.bincount(labels, weights=weights, minlength=k).astype(np.float64)
    sums = np.empty((k, values.shape[1]))
    for d in range(values.shape[1]):
        w = values[:, d] if weights is None else values[:, d] * weights
        sums[:, d] = np.bincount(labels, weights=w, minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / mass[:, None]
    return means, mass


def initial_superpixel_features(features: np.ndarray, labels: np.ndarray, k: int | None = None) -> np.ndarray:
    """Average-pool per-pixel features over each initial superpixel."""
    labels = np.asarray(labels)
    if k is None:
        k = int(labels.max()) + 1
    d = features.shape[-1]
    means, mass = region_means(features.reshape(-1, d), labels, k)
    empty = np.flatnonzero(mass == 0)
    if len(empty):
        raise EmptySuperpixelError(int(empty[0]))
    return means


def normalize_rows(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def build_neighbor_table(barycenters: np.ndarray, n: int = N_NEIGHBORS) -> np.ndarray:
    """``min(n, K)`` nearest barycenters per superpixel, itself first.

    Ordered by chord distance, ties by index. Returns a ``(K, n)`` int array.
    """
    b = np.asarray(barycenters, dtype=np.float64)
    k = len(b)
    if k < 1:
        raise ValueError("need at least one barycenter")
    n = min(n, k)
    table = np.empty((k, n), dtype=np.int64)
    block = max(1, 2**22 // k)
    for a in range(0, k, block):
        rows = np.arange(a, min(k, a + block))
        d = ((b[rows, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        d[np.arange(len(rows)), rows] = -1.0  # self first even with duplicate barycenters
        table[rows] = np.argsort(d, axis=1, kind="stable")[:, :n]
    return table


@dataclass(frozen=True, eq=False)
class SeedLayout:
    """Feature-independent initialisation derived from seeds and grid."""

    labels: np.ndarray  # (h, w) initial label map
    barycenters: np.ndarray  # (K, 3) unit barycenters of the initial regions
    neighbors: np.ndarray  # (K, n) neighbor table
    k: int

    @property
    def candidates(self) -> np.ndarray:
        """``(N, n)`` candidate superpixels of every pixel."""
        return self.neighbors[self.labels.ravel()]


_layout_cache: OrderedDict = OrderedDict()


def seed_layout(seeds: SeedSet, grid: SphereGrid) -> SeedLayout:
    """Initial label map, region barycenters and neighbor table (cached)."""
    key = (seeds.points.tobytes(), grid.shape.h, grid.shape.w)
    hit = _layout_cache.get(key)
    if hit is not None:
        _layout_cache.move_to_end(key)
        return hit
    labels = initial_label_map(seeds, grid)
    means, mass = region_means(grid.coords, labels, seeds.k)
    bary = seeds.points.copy()
    filled = mass > 0
    norms = np.linalg.norm(means[filled], axis=1)
    ok = np.flatnonzero(filled)[norms > 0]
    bary[ok] = means[ok] / np.linalg.norm(means[ok], axis=1, keepdims=True)
    layout = SeedLayout(labels, bary, build_neighbor_table(bary), seeds.k)
    for arr in (labels, bary, layout.neighbors):
        arr.setflags(write=False)
    _layout_cache[key] = layout
    if len(_layout_cache) > 8:
        _layout_cache.popitem(last=False)
    return layout
