"""End-to-end segmentation of an RGB equirectangular image."""

from __future__ import annotations

import numpy as np

from .clustering import DEFAULT_SPATIAL_WEIGHT, cluster_hard, enforce_connectivity, hard_from_soft
from .features import ConvSpec, learned_stack
from .metrics import asa
from .objective import soft_cluster
from .sampling import hammersley_sphere

MODES = ("hard", "soft")


def segment(image: np.ndarray, k: int = 500, iterations: int | None = None,
            spatial_weight: float = DEFAULT_SPATIAL_WEIGHT, mode: str = "hard", temperature: float = 1.0,
            layers: list[ConvSpec] | None = None, min_size: float | None = None, connectivity: bool = True,
            threads: int | None = None) -> np.ndarray:
    """Superpixel label map of ``image``.

    ``iterations`` defaults to 10 in hard mode and 3 in soft mode.
    ``min_size`` defaults to ``N / (4k)``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    stack = learned_stack(image, layers)
    seeds = hammersley_sphere(k)
    if mode == "hard":
        labels = cluster_hard(stack, seeds, iterations or 10, spatial_weight, threads).labels
    else:
        soft, _ = soft_cluster(stack, seeds, iterations or 3, temperature, spatial_weight, threads)
        labels = hard_from_soft(soft)
    if connectivity:
        if min_size is None:
            min_size = labels.size / (4 * k)
        labels = enforce_connectivity(labels, min_size)
    return labels.astype(np.int64)


def mean_asa(dataset, layers: list[ConvSpec] | None = None, k: int = 50, iterations: int = 10,
             spatial_weight: float = DEFAULT_SPATIAL_WEIGHT, threads: int | None = None) -> float:
    """Mean ASA of hard segmentations (after connectivity) over ``(image, gt)`` pairs."""
    scores = [asa(segment(image, k, iterations, spatial_weight, layers=layers, threads=threads), gt)
              for image, gt in dataset]
    return float(np.mean(scores))
