"""Differentiable soft clustering and its training loss.

Each pixel is softly assigned to its candidate superpixels with
``softmax(-distance / temperature)``; centroids are the assignment-weighted
feature means. The loss combines

* a segmentation term: ground-truth one-hot labels are pooled onto the
  superpixels and scattered back through the assignment, then scored by
  pixel-wise cross-entropy;
* a compactness term: mean squared distance between every pixel position
  and the soft position centroid of its most likely superpixel.

Gradients are computed by reverse-mode differentiation through all the
unrolled clustering iterations. Candidate sets and the most-likely index
used by the compactness term are treated as constants.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import (
    DEFAULT_SPATIAL_WEIGHT,
    SuperpixelState,
    _finish_update,
    candidate_distances,
    channel_weights,
    hard_from_soft,
    initial_state,
)
from .features import (
    POSITION,
    ConvSpec,
    FeatureStack,
    base_stack,
    feature_net_backward,
    feature_net_forward,
    init_feature_net,
    net_input,
)
from .geometry import GridShape, SphereGrid
from .sampling import SeedSet, hammersley_sphere, seed_layout
from .synthetic import band_image

log = logging.getLogger(__name__)

EPS_LOG = 1e-12
DEFAULT_TRAIN_ITERATIONS = 3


@dataclass(frozen=True, eq=False)
class SoftAssignment:
    candidates: np.ndarray  # (N, n) superpixel indices
    weights: np.ndarray  # (N, n), rows sum to 1
    shape: GridShape


@dataclass
class LossReport:
    l_seg: float
    l_compact: float
    lam: float

    @property
    def total(self) -> float:
        return self.l_seg + self.lam * self.l_compact


def softmax_neg(dist: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise ``softmax(-dist / temperature)`` with min-subtraction."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.exp(-(dist - dist.min(axis=1, keepdims=True)) / temperature)
    return z / z.sum(axis=1, keepdims=True)


def soft_pool(weights: np.ndarray, candidates: np.ndarray, values: np.ndarray, k: int):
    """Assignment-weighted means of per-pixel ``values`` for every superpixel.

    Returns ``(means (K, E), mass (K,))``; rows with zero mass are zero.
    """
    idx = candidates.ravel()
    mass = np.bincount(idx, weights=weights.ravel(), minlength=k)
    means = np.zeros((k, values.shape[1]))
    for e in range(values.shape[1]):
        means[:, e] = np.bincount(idx, weights=(weights * values[:, e:e + 1]).ravel(), minlength=k)
    filled = mass > 0
    means[filled] /= mass[filled, None]
    return means, mass


def _pool_backward(grad_means, means, mass, weights, candidates, values):
    """Adjoint of :func:`soft_pool`: returns ``(d_weights, d_values)``."""
    r = np.zeros_like(grad_means)
    filled = mass > 0
    r[filled] = grad_means[filled] / mass[filled, None]
    r_c = r[candidates]  # (N, n, E)
    d_weights = (r_c * (values[:, None, :] - means[candidates])).sum(axis=2)
    d_values = (weights[:, :, None] * r_c).sum(axis=1)
    return d_weights, d_values


def _scatter_rows(values: np.ndarray, index: np.ndarray, k: int) -> np.ndarray:
    """Sum rows of ``values`` (``(M, E)``) into ``k`` bins."""
    out = np.empty((k, values.shape[1]))
    for e in range(values.shape[1]):
        out[:, e] = np.bincount(index, weights=values[:, e], minlength=k)
    return out


def soft_assign(stack: FeatureStack, state: SuperpixelState, temperature: float = 1.0,
                spatial_weight: float = DEFAULT_SPATIAL_WEIGHT, threads: int | None = None) -> SoftAssignment:
    cand = state.candidates
    dist = candidate_distances(stack.flat, state.centroids, cand, channel_weights(stack.d, spatial_weight), threads)
    return SoftAssignment(cand, softmax_neg(dist, temperature), stack.shape)


def soft_update(stack: FeatureStack, soft: SoftAssignment, k: int, previous: SuperpixelState | None = None):
    """Soft centroids and renormalised barycenters (zero-mass rows carried over)."""
    means, mass = soft_pool(soft.weights, soft.candidates, stack.flat, k)
    return _finish_update(means, mass, previous)


def soft_cluster(stack: FeatureStack, seeds: SeedSet, iterations: int = DEFAULT_TRAIN_ITERATIONS,
                 temperature: float = 1.0, spatial_weight: float = DEFAULT_SPATIAL_WEIGHT,
                 threads: int | None = None):
    """``iterations`` rounds of soft assignment and update.

    Returns the last assignment and the state holding the centroids it
    produces.
    """
    if iterations < 1:
        raise ValueError("need at least one iteration")
    state = initial_state(stack, seeds)
    for t in range(iterations):
        soft = soft_assign(stack, state, temperature, spatial_weight, threads)
        centroids, bary = soft_update(stack, soft, state.k, state)
        state = replace(state, centroids=centroids, barycenters=bary, labels=hard_from_soft(soft), iterations=t + 1)
    return soft, state


def _check_gt(gt: np.ndarray, n_classes: int | None):
    gt = np.asarray(gt).ravel()
    if n_classes is None:
        n_classes = int(gt.max()) + 1
    if gt.min() < 0 or gt.max() >= n_classes:
        raise ValueError(f"ground-truth classes must lie in [0, {n_classes})")
    return gt, n_classes


def loss_seg(soft: SoftAssignment, gt: np.ndarray, n_classes: int | None = None) -> float:
    gt, n_classes = _check_gt(gt, n_classes)
    k = int(soft.candidates.max()) + 1
    onehot = np.eye(n_classes)[gt]
    pooled, _ = soft_pool(soft.weights, soft.candidates, onehot, k)
    q = (soft.weights * pooled[soft.candidates, gt[:, None]]).sum(axis=1)
    return float(-np.mean(np.log(q + EPS_LOG)))


def loss_compact(soft: SoftAssignment, positions) -> float:
    """Mean squared distance from each pixel to its superpixel's soft position centroid.

    ``positions`` is a :class:`SphereGrid` or an ``(N, 3)`` array. The
    centroid is not projected back onto the sphere.
    """
    x = positions.coords if isinstance(positions, SphereGrid) else np.asarray(positions).reshape(-1, 3)
    k = int(soft.candidates.max()) + 1
    pos, _ = soft_pool(soft.weights, soft.candidates, x, k)
    n = len(x)
    hk = soft.candidates[np.arange(n), np.argmax(soft.weights, axis=1)]
    r = x - pos[hk]
    return float((r * r).sum() / n)


@dataclass
class _Problem:
    candidates: np.ndarray
    init_labels: np.ndarray
    k: int
    gt: np.ndarray
    n_classes: int
    iterations: int
    temperature: float
    lam: float
    spatial_weight: float


def _problem(shape: GridShape, seeds: SeedSet, gt, iterations, temperature, lam, spatial_weight, n_classes=None):
    if iterations < 1:
        raise ValueError("need at least one iteration")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    layout = seed_layout(seeds, SphereGrid.build(shape))
    gt, n_classes = _check_gt(gt, n_classes)
    if len(gt) != shape.n:
        raise ValueError("ground truth does not match the image size")
    return _Problem(layout.candidates, layout.labels.ravel(), seeds.k, gt, n_classes, iterations, temperature, lam,
                    spatial_weight)


def _loss_and_grad(features: np.ndarray, pb: _Problem, want_grad: bool = True):
    """Loss of flat features ``(N, D)`` and optionally its gradient."""
    f = features
    n, d = f.shape
    cand, k = pb.candidates, pb.k
    wv = channel_weights(d, pb.spatial_weight)

    count0 = np.bincount(pb.init_labels, minlength=k).astype(np.float64)
    if np.any(count0 == 0):
        raise ValueError(f"superpixel {int(np.flatnonzero(count0 == 0)[0])} has no pixels")
    c = _scatter_rows(f, pb.init_labels, k) / count0[:, None]

    cents, assigns, masses = [c], [], []
    for t in range(pb.iterations):
        dist = candidate_distances(f, c, cand, wv, threads=1)
        w = softmax_neg(dist, pb.temperature)
        assigns.append(w)
        if t < pb.iterations - 1:
            means, mass = soft_pool(w, cand, f, k)
            c = np.where((mass > 0)[:, None], means, c)
            masses.append(mass)
            cents.append(c)
    w = assigns[-1]

    rows = np.arange(n)
    onehot = np.eye(pb.n_classes)[pb.gt]
    pooled, mass_y = soft_pool(w, cand, onehot, k)
    p_gt = pooled[cand, pb.gt[:, None]]  # (N, n)
    q = (w * p_gt).sum(axis=1)
    l_seg = float(-np.mean(np.log(q + EPS_LOG)))

    x = f[:, POSITION]
    pos, mass_x = soft_pool(w, cand, x, k)
    hk = cand[rows, np.argmax(w, axis=1)]
    resid = x - pos[hk]
    l_compact = float((resid * resid).sum() / n)
    report = LossReport(l_seg, l_compact, pb.lam)
    if not want_grad:
        return report, None

    grad_f = np.zeros_like(f)

    # segmentation term
    g_q = -1.0 / (n * (q + EPS_LOG))
    g_w = g_q[:, None] * p_gt
    cell = (cand * pb.n_classes + pb.gt[:, None]).ravel()
    g_pooled = np.bincount(cell, weights=(g_q[:, None] * w).ravel(), minlength=k * pb.n_classes)
    g_pooled = g_pooled.reshape(k, pb.n_classes)
    gw_y, _ = _pool_backward(g_pooled, pooled, mass_y, w, cand, onehot)
    g_w += gw_y

    # compactness term
    if pb.lam != 0.0:
        g_resid = (2.0 * pb.lam / n) * resid
        g_pos = -_scatter_rows(g_resid, hk, k)
        gw_x, gx = _pool_backward(g_pos, pos, mass_x, w, cand, x)
        g_w += gw_x
        grad_f[:, POSITION] += g_resid + gx

    # unrolled clustering iterations, newest first
    carry = np.zeros((k, d))
    for t in range(pb.iterations - 1, -1, -1):
        w = assigns[t]
        c = cents[t]
        g_z = w * (g_w - (w * g_w).sum(axis=1, keepdims=True))
        g_dist = -g_z / pb.temperature
        diff = f[:, None, :] - c[cand]  # (N, n, D)
        g_diff = (2.0 * g_dist)[:, :, None] * diff * wv
        grad_f += g_diff.sum(axis=1)
        g_c = carry - _scatter_rows(g_diff.reshape(-1, d), cand.ravel(), k)
        if t == 0:
            grad_f += g_c[pb.init_labels] / count0[pb.init_labels, None]
            break
        mass = masses[t - 1]
        filled = mass > 0
        carry = np.where(filled[:, None], 0.0, g_c)
        g_w, gf = _pool_backward(np.where(filled[:, None], g_c, 0.0), c, mass, assigns[t - 1], cand, f)
        grad_f += gf
    return report, grad_f


def loss_total(stack: FeatureStack, seeds: SeedSet, gt: np.ndarray, iterations: int = DEFAULT_TRAIN_ITERATIONS,
               temperature: float = 1.0, lam: float = 1.0, spatial_weight: float = DEFAULT_SPATIAL_WEIGHT,
               n_classes: int | None = None) -> LossReport:
    pb = _problem(stack.shape, seeds, gt, iterations, temperature, lam, spatial_weight, n_classes)
    return _loss_and_grad(stack.flat, pb, want_grad=False)[0]


def loss_gradient(stack: FeatureStack, seeds: SeedSet, gt: np.ndarray, iterations: int = DEFAULT_TRAIN_ITERATIONS,
                  temperature: float = 1.0, lam: float = 1.0, spatial_weight: float = DEFAULT_SPATIAL_WEIGHT,
                  n_classes: int | None = None):
    """Loss report and its gradient w.r.t. every feature, ``(h, w, D)``."""
    pb = _problem(stack.shape, seeds, gt, iterations, temperature, lam, spatial_weight, n_classes)
    report, grad = _loss_and_grad(stack.flat, pb)
    return report, grad.reshape(stack.values.shape)


# --- toy training ---------------------------------------------------------

class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, last_finite: float | None):
        super().__init__(f"non-finite loss at step {step}; last finite loss {last_finite}")
        self.step = step
        self.last_finite = last_finite


@dataclass
class TrainConfig:
    k: int = 50
    iterations: int = DEFAULT_TRAIN_ITERATIONS
    temperature: float = 1.0
    lam: float = 1.0
    spatial_weight: float = DEFAULT_SPATIAL_WEIGHT
    n_classes: int | None = None


@dataclass
class TrainResult:
    layers: list[ConvSpec]
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)


def net_loss_and_grad(image_stack: np.ndarray, layers: list[ConvSpec], seeds: SeedSet, gt: np.ndarray,
                      cfg: TrainConfig, want_grad: bool = True):
    """Loss of the stack ``[base | net(base)]`` and gradients of the net weights."""
    learned, inputs = feature_net_forward(net_input(image_stack, layers), layers, keep=True)
    stack = FeatureStack(np.concatenate([image_stack, learned], axis=2))
    pb = _problem(stack.shape, seeds, gt, cfg.iterations, cfg.temperature, cfg.lam, cfg.spatial_weight,
                  cfg.n_classes)
    report, grad = _loss_and_grad(stack.flat, pb, want_grad)
    if not want_grad:
        return report, None
    g_learned = grad.reshape(stack.values.shape)[:, :, image_stack.shape[2]:]
    _, grads = feature_net_backward(inputs, layers, g_learned)
    return report, grads


def train_toy(dataset, layers: list[ConvSpec], steps: int, lr: float, cfg: TrainConfig | None = None) -> TrainResult:
    """Plain gradient descent on the net weights, one image per step in turn."""
    if not dataset:
        raise ValueError("empty dataset")
    cfg = cfg or TrainConfig()
    if cfg.n_classes is None:
        cfg = replace(cfg, n_classes=max(int(g.max()) for _, g in dataset) + 1)
    layers = [ConvSpec(l.weight.copy(), l.bias.copy(), l.padding) for l in layers]
    seeds = hammersley_sphere(cfg.k)
    bases = [base_stack(image).values for image, _ in dataset]
    result = TrainResult(layers)
    last = None
    for step in range(steps):
        i = step % len(dataset)
        report, grads = net_loss_and_grad(bases[i], layers, seeds, dataset[i][1], cfg)
        if not np.isfinite(report.total):
            raise TrainingDiverged(step, last)
        last = report.total
        result.trace.append((step, report.l_seg, report.l_compact, report.total))
        if step % 50 == 0:
            log.info("step %d loss %.6f (seg %.6f, compact %.6f)", step, report.total, report.l_seg,
                     report.l_compact)
        for layer, (dw, db) in zip(layers, grads):
            layer.weight -= lr * dw
            layer.bias -= lr * db
        if not all(np.all(np.isfinite(l.weight)) for l in layers):
            raise TrainingDiverged(step, last)
    return result


def dataset_loss(dataset, layers: list[ConvSpec], cfg: TrainConfig | None = None) -> float:
    """Mean total loss over a dataset for the given net."""
    cfg = cfg or TrainConfig()
    if cfg.n_classes is None:
        cfg = replace(cfg, n_classes=max(int(g.max()) for _, g in dataset) + 1)
    seeds = hammersley_sphere(cfg.k)
    losses = [net_loss_and_grad(base_stack(img).values, layers, seeds, gt, cfg, want_grad=False)[0].total
              for img, gt in dataset]
    return float(np.mean(losses))


# --- gradient check -------------------------------------------------------

def _relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def gradient_check(seed: int = 0, height: int = 16, width: int = 32, k: int = 8, iterations: int = 3,
                   n_coords: int = 100, step: float = 1e-5, lam: float = 1.0,
                   spatial_weight: float = DEFAULT_SPATIAL_WEIGHT, temperature: float = 1.0,
                   net_widths=(6, 4, 4), tolerance: float = 1e-4, corrupt: float = 0.0) -> dict:
    """Compare analytic gradients with centred finite differences.

    Builds a band image from ``seed``, appends the output of a random net,
    and checks ``n_coords`` random feature coordinates and ``n_coords``
    random net weights. ``corrupt`` scales the analytic gradients by
    ``1 + corrupt`` (a negative control).
    """
    rng = np.random.default_rng(seed)
    shape = GridShape(height, width)
    image, gt = band_image(shape, 2, 3, 10.0, rng)
    base = base_stack(image).values
    layers = init_feature_net(seed, widths=net_widths)
    seeds = hammersley_sphere(k)
    cfg = TrainConfig(k=k, iterations=iterations, temperature=temperature, lam=lam, spatial_weight=spatial_weight,
                      n_classes=int(gt.max()) + 1)
    pb = _problem(shape, seeds, gt, iterations, temperature, lam, spatial_weight, cfg.n_classes)

    feats = np.concatenate([base, feature_net_forward(base, layers)], axis=2).reshape(shape.n, -1)
    _, g_feat = _loss_and_grad(feats, pb)
    g_feat = g_feat * (1.0 + corrupt)
    pix = rng.integers(shape.n, size=n_coords)
    ch = rng.integers(feats.shape[1], size=n_coords)
    fd = np.empty(n_coords)
    for n, (p, c) in enumerate(zip(pix, ch)):
        probe = feats.copy()
        probe[p, c] += step
        up = _loss_and_grad(probe, pb, want_grad=False)[0].total
        probe[p, c] -= 2 * step
        down = _loss_and_grad(probe, pb, want_grad=False)[0].total
        fd[n] = (up - down) / (2 * step)
    err_feat = _relative_error(g_feat[pix, ch], fd)

    _, grads = net_loss_and_grad(base, layers, seeds, gt, cfg)
    flat_sizes = [l.weight.size for l in layers]
    which = rng.integers(len(layers), size=n_coords)
    analytic_w = np.empty(n_coords)
    fd_w = np.empty(n_coords)
    for n, li in enumerate(which):
        j = int(rng.integers(flat_sizes[li]))
        analytic_w[n] = grads[li][0].ravel()[j] * (1.0 + corrupt)
        w = layers[li].weight.reshape(-1)
        orig = w[j]
        w[j] = orig + step
        up = net_loss_and_grad(base, layers, seeds, gt, cfg, want_grad=False)[0].total
        w[j] = orig - step
        down = net_loss_and_grad(base, layers, seeds, gt, cfg, want_grad=False)[0].total
        w[j] = orig
        fd_w[n] = (up - down) / (2 * step)
    err_w = _relative_error(analytic_w, fd_w)

    worst = float(max(err_feat.max(), err_w.max()))
    return {
        "features": {"max_rel_error": float(err_feat.max()), "mean_rel_error": float(err_feat.mean()),
                     "coords": int(n_coords)},
        "weights": {"max_rel_error": float(err_w.max()), "mean_rel_error": float(err_w.mean()),
                    "coords": int(n_coords)},
        "max_rel_error": worst,
        "tolerance": tolerance,
        "passed": bool(worst <= tolerance),
    }
