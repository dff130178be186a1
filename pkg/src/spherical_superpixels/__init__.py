"""Superpixels for equirectangular 360° images, computed on the unit sphere."""

from .augment import AugmentSpec, compose_augmentations, crop_mirror, pano_stretch
from .clustering import SuperpixelState, cluster_hard, enforce_connectivity, hard_from_soft
from .features import ConvSpec, FeatureStack, base_stack, init_feature_net, learned_stack
from .geometry import GridShape, SphereGrid, pixel_to_sphere, sphere_to_pixel
from .metrics import MetricsReport, asa, boundary_recall, contour_density, evaluate
from .objective import LossReport, loss_gradient, loss_total, soft_cluster, train_toy
from .pipeline import segment
from .sampling import SeedSet, hammersley_sphere

__all__ = [
    "AugmentSpec", "ConvSpec", "FeatureStack", "GridShape", "LossReport", "MetricsReport", "SeedSet",
    "SphereGrid", "SuperpixelState", "asa", "base_stack", "boundary_recall", "cluster_hard",
    "compose_augmentations", "contour_density", "crop_mirror", "enforce_connectivity", "evaluate",
    "hammersley_sphere", "hard_from_soft", "init_feature_net", "learned_stack", "loss_gradient", "loss_total",
    "pano_stretch", "pixel_to_sphere", "segment", "soft_cluster", "sphere_to_pixel", "train_toy",
]
