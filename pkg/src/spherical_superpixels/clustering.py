"""Locally constrained K-means on the sphere.

Every pixel may only join one of the superpixels neighbouring its initial
superpixel. The distance between a pixel and a centroid is the squared
Euclidean distance over all feature channels, with the three position
channels multiplied by ``spatial_weight``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import _parallel
from .features import POSITION, FeatureStack
from .geometry import GridShape, SphereGrid
from .sampling import SeedSet, initial_superpixel_features, region_means, seed_layout

DEFAULT_SPATIAL_WEIGHT = 10.0


@dataclass(frozen=True, eq=False)
class SuperpixelState:
    centroids: np.ndarray  # (K, D)
    barycenters: np.ndarray  # (K, 3), unit norm
    labels: np.ndarray  # (h, w)
    neighbors: np.ndarray  # (K, n)
    init_labels: np.ndarray  # (h, w), fixes each pixel's candidates
    iterations: int = 0

    @property
    def k(self) -> int:
        return len(self.centroids)

    @property
    def candidates(self) -> np.ndarray:
        return self.neighbors[self.init_labels.ravel()]


def channel_weights(d: int, spatial_weight: float) -> np.ndarray:
    if spatial_weight < 0:
        raise ValueError("spatial weight must be non-negative")
    wv = np.ones(d)
    wv[POSITION] = spatial_weight
    return wv


def candidate_distances(features: np.ndarray, centroids: np.ndarray, candidates: np.ndarray,
                        weights: np.ndarray, threads: int | None = None) -> np.ndarray:
    """Weighted squared distances of each pixel to its candidates, ``(N, n)``."""
    f_t = np.ascontiguousarray(features.T)
    c_t = np.ascontiguousarray(centroids.T)

    def work(a, b):
        cand = candidates[a:b]
        out = np.zeros(cand.shape)
        for c in range(cand.shape[1]):
            idx = cand[:, c]
            acc = out[:, c]
            for d in range(len(weights)):
                diff = f_t[d, a:b] - c_t[d][idx]
                diff *= diff
                if weights[d] != 1.0:
                    diff *= weights[d]
                acc += diff
        return out

    return _parallel.concat_map(work, len(features), threads)


def initial_state(stack: FeatureStack, seeds: SeedSet) -> SuperpixelState:
    """Seed layout plus average-pooled initial centroids."""
    grid = SphereGrid.build(stack.shape)
    layout = seed_layout(seeds, grid)
    centroids = initial_superpixel_features(stack.flat, layout.labels, seeds.k)
    return SuperpixelState(centroids, layout.barycenters.copy(), layout.labels, layout.neighbors, layout.labels)


def assign_hard(stack: FeatureStack, state: SuperpixelState, spatial_weight: float = DEFAULT_SPATIAL_WEIGHT,
                threads: int | None = None) -> np.ndarray:
    """Nearest candidate centroid of every pixel (first candidate on ties)."""
    cand = state.candidates
    dist = candidate_distances(stack.flat, state.centroids, cand, channel_weights(stack.d, spatial_weight), threads)
    best = np.argmin(dist, axis=1)
    return cand[np.arange(len(cand)), best].reshape(state.labels.shape)


def update_centroids(stack: FeatureStack, labels: np.ndarray, k: int, previous: SuperpixelState | None = None):
    """Per-label feature means and renormalised position barycenters.

    Superpixels with no pixels, or whose mean position is the origin, keep
    the values from ``previous``.
    """
    means, mass = region_means(stack.flat, labels, k)
    return _finish_update(means, mass, previous)


def _finish_update(means, mass, previous):
    centroids = means
    bary = means[:, POSITION].copy()
    norms = np.linalg.norm(bary, axis=1)
    empty = mass <= 0
    degenerate = ~empty & (norms == 0)
    if previous is not None:
        centroids[empty] = previous.centroids[empty]
        bary[empty | degenerate] = previous.barycenters[empty | degenerate]
    elif np.any(empty | degenerate):
        raise ValueError("empty superpixel without a previous state to carry over")
    ok = ~(empty | degenerate)
    bary[ok] /= norms[ok, None]
    return centroids, bary


def clustering_objective(stack: FeatureStack, state: SuperpixelState, spatial_weight: float,
                         centroids: np.ndarray | None = None) -> float:
    """Sum over pixels of the distance to the centroid of their label."""
    c = state.centroids if centroids is None else centroids
    diff = stack.flat - c[state.labels.ravel()]
    return float((diff * diff * channel_weights(stack.d, spatial_weight)).sum())


def cluster_hard(stack: FeatureStack, seeds: SeedSet, iterations: int = 10,
                 spatial_weight: float = DEFAULT_SPATIAL_WEIGHT, threads: int | None = None,
                 trace: list | None = None) -> SuperpixelState:
    """Run ``iterations`` rounds of assignment and centroid update.

    If ``trace`` is a list, the objective after each assignment step is
    appended to it.
    """
    if iterations < 1:
        raise ValueError("need at least one iteration")
    state = initial_state(stack, seeds)
    for t in range(iterations):
        labels = assign_hard(stack, state, spatial_weight, threads)
        if trace is not None:
            trace.append(clustering_objective(stack, replace(state, labels=labels), spatial_weight))
        centroids, bary = update_centroids(stack, labels, state.k, state)
        state = replace(state, centroids=centroids, barycenters=bary, labels=labels, iterations=t + 1)
    return state


def hard_from_soft(soft) -> np.ndarray:
    """Candidate with the largest weight for every pixel (first on ties)."""
    best = np.argmax(soft.weights, axis=1)
    return soft.candidates[np.arange(len(best)), best].reshape(soft.shape.h, soft.shape.w)


# --- connectivity ---------------------------------------------------------

def _adjacent_pairs(h: int, w: int):
    """Index pairs of 4-neighbours with horizontal wrap, no vertical wrap."""
    idx = np.arange(h * w).reshape(h, w)
    right = (idx, np.roll(idx, -1, axis=1))
    down = (idx[:-1], idx[1:])
    a = np.concatenate([right[0].ravel(), down[0].ravel()])
    b = np.concatenate([right[1].ravel(), down[1].ravel()])
    return a, b


def wrapped_components(labels: np.ndarray) -> np.ndarray:
    """Connected components of equal labels on the horizontally wrapped grid.

    Components are numbered by the raster order of their first pixel.
    """
    h, w = labels.shape
    flat = labels.ravel()
    a, b = _adjacent_pairs(h, w)
    same = flat[a] == flat[b]
    n = h * w
    graph = coo_matrix((np.ones(int(same.sum()), dtype=np.int8), (a[same], b[same])), shape=(n, n))
    n_comp, comp = connected_components(graph, directed=False)
    first = np.full(n_comp, n)
    np.minimum.at(first, comp, np.arange(n))
    if np.any(np.diff(first) < 0):
        rank = np.empty(n_comp, dtype=comp.dtype)
        rank[np.argsort(first, kind="stable")] = np.arange(n_comp)
        comp = rank[comp]
    return comp.reshape(h, w)


def enforce_connectivity(labels: np.ndarray, min_size: float | None = None) -> np.ndarray:
    """Make every label a single wrapped 4-connected region.

    The largest component of each label is kept when it has at least
    ``min_size`` pixels; every other component is merged into the adjacent
    kept region whose barycenter is nearest. ``min_size`` defaults to
    ``N / (4 * number_of_labels)``.
    """
    labels = np.asarray(labels)
    h, w = labels.shape
    flat = labels.ravel()
    if min_size is None:
        min_size = h * w / (4 * len(np.unique(flat)))
    comp = wrapped_components(labels).ravel()
    n_comp = int(comp.max()) + 1
    grid = SphereGrid.build(GridShape(h, w))
    means, size = region_means(grid.coords, comp, n_comp)
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    bary = np.where(norms > 0, means / np.where(norms > 0, norms, 1.0), means)

    first = np.full(n_comp, h * w)
    np.minimum.at(first, comp, np.arange(h * w))
    comp_label = flat[first]

    # Largest component per label; ties go to the earliest in raster order.
    order = np.lexsort((np.arange(n_comp), -size, comp_label))
    lead = np.ones(n_comp, dtype=bool)
    lead[1:] = comp_label[order][1:] != comp_label[order][:-1]
    keep = np.zeros(n_comp, dtype=bool)
    keep[order[lead]] = True
    keep &= size >= min_size
    if not keep.any():
        keep[np.argmax(size)] = True

    region = np.where(keep, np.arange(n_comp), -1)
    if not keep.all():
        a, b = _adjacent_pairs(h, w)
        ca, cb = comp[a], comp[b]
        cross = ca != cb
        code = np.unique(np.concatenate([
            ca[cross].astype(np.int64) * n_comp + cb[cross],
            cb[cross].astype(np.int64) * n_comp + ca[cross],
        ]))
        pairs = np.stack([code // n_comp, code % n_comp], axis=1)
        while (region < 0).any():
            src, dst = pairs[:, 0], pairs[:, 1]
            live = (region[src] < 0) & (region[dst] >= 0)
            if not live.any():
                raise RuntimeError("unreachable components during connectivity enforcement")
            src, target = src[live], region[dst[live]]
            cost = ((bary[src] - bary[target]) ** 2).sum(axis=1)
            pick = np.lexsort((comp_label[target], cost, src))
            src, target = src[pick], target[pick]
            head = np.ones(len(src), dtype=bool)
            head[1:] = src[1:] != src[:-1]
            region[src[head]] = target[head]
    return comp_label[region][comp].reshape(h, w)
