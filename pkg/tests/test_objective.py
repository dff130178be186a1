import numpy as np
import pytest

from spherical_superpixels.clustering import cluster_hard, hard_from_soft
from spherical_superpixels.features import POSITION, FeatureStack, base_stack, init_feature_net
from spherical_superpixels.geometry import GridShape, SphereGrid
from spherical_superpixels.objective import (
    TrainConfig,
    TrainingDiverged,
    dataset_loss,
    gradient_check,
    loss_compact,
    loss_gradient,
    loss_seg,
    loss_total,
    soft_cluster,
    soft_pool,
    softmax_neg,
    train_toy,
)
from spherical_superpixels.sampling import hammersley_sphere
from spherical_superpixels.synthetic import band_dataset, band_image


@pytest.fixture
def toy(rng):
    image, gt = band_image(GridShape(16, 32), 2, 3, 10.0, rng)
    return base_stack(image), gt


class TestSoftmax:
    def test_against_extended_precision(self, rng):
        dist = rng.uniform(0, 50, size=(20, 9))
        got = softmax_neg(dist, 0.7)
        d = dist.astype(np.longdouble)
        z = np.exp(-d / np.longdouble(0.7))
        ref = z / z.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(got, ref.astype(np.float64), rtol=1e-12, atol=1e-300)

    def test_cold_limit_is_one_hot(self):
        w = softmax_neg(np.array([[3.0, 1.0, 2.0]]), 1e-6)
        np.testing.assert_array_equal(w, [[0.0, 1.0, 0.0]])

    def test_large_distances_stay_finite(self):
        w = softmax_neg(np.array([[1e6, 1e6 + 1]]), 1.0)
        assert np.all(np.isfinite(w)) and w[0, 0] > w[0, 1]

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            softmax_neg(np.zeros((1, 2)), 0.0)


class TestSoftPool:
    def test_against_loop(self, rng):
        cand = rng.integers(0, 5, size=(30, 3))
        w = rng.dirichlet(np.ones(3), size=30)
        v = rng.normal(size=(30, 2))
        means, mass = soft_pool(w, cand, v, 6)
        for k in range(5):
            wk = (w * (cand == k)).sum(axis=1)
            assert mass[k] == pytest.approx(wk.sum())
            if wk.sum() > 0:
                np.testing.assert_allclose(means[k], (wk[:, None] * v).sum(axis=0) / wk.sum(), rtol=1e-12)
        assert mass[5] == 0 and not means[5].any()


class TestSoftCluster:
    def test_weights_are_distributions(self, toy):
        soft, _ = soft_cluster(toy[0], hammersley_sphere(8))
        np.testing.assert_allclose(soft.weights.sum(axis=1), 1.0)
        assert soft.candidates.shape == soft.weights.shape == (512, 8)

    def test_single_iteration_matches_hard_assignment(self, toy):
        stack, _ = toy
        seeds = hammersley_sphere(8)
        soft, _ = soft_cluster(stack, seeds, iterations=1, temperature=1.0)
        hard = cluster_hard(stack, seeds, iterations=1)
        np.testing.assert_array_equal(hard_from_soft(soft), hard.labels)


class TestLoss:
    def test_total_is_sum_of_terms(self, toy):
        stack, gt = toy
        seeds = hammersley_sphere(8)
        soft, _ = soft_cluster(stack, seeds)
        report = loss_total(stack, seeds, gt, lam=0.5)
        assert report.l_seg == pytest.approx(loss_seg(soft, gt), rel=1e-12)
        assert report.l_compact == pytest.approx(loss_compact(soft, SphereGrid.build(stack.shape)), rel=1e-12)
        assert report.total == pytest.approx(report.l_seg + 0.5 * report.l_compact)

    def test_constant_ground_truth_has_no_segmentation_loss(self, toy):
        stack, _ = toy
        report = loss_total(stack, hammersley_sphere(8), np.zeros((16, 32), int))
        assert report.l_seg == pytest.approx(0.0, abs=1e-10)

    def test_loss_seg_by_hand(self):
        from spherical_superpixels.objective import SoftAssignment

        # each pixel sits alone in its own superpixel: perfect prediction
        soft = SoftAssignment(np.array([[0, 1], [1, 0]]), np.array([[1.0, 0.0], [1.0, 0.0]]), GridShape(2, 2))
        assert loss_seg(soft, np.array([0, 1])) == pytest.approx(0.0, abs=1e-10)
        # a half-half assignment of two different classes gives log 2 per pixel
        soft = SoftAssignment(np.array([[0, 1], [0, 1]]), np.full((2, 2), 0.5), GridShape(2, 2))
        assert loss_seg(soft, np.array([0, 1])) == pytest.approx(np.log(2.0), rel=1e-9)

    def test_ground_truth_validation(self, toy):
        stack, gt = toy
        with pytest.raises(ValueError):
            loss_total(stack, hammersley_sphere(8), gt - 1)
        with pytest.raises(ValueError):
            loss_total(stack, hammersley_sphere(8), gt[:8])


class TestGradient:
    def test_default_check_passes(self):
        result = gradient_check(n_coords=30)
        assert result["passed"], result

    def test_corrupted_gradient_fails(self):
        result = gradient_check(n_coords=10, corrupt=0.01)
        assert not result["passed"]

    def test_position_gradient_zero_without_spatial_terms(self, toy):
        stack, gt = toy
        _, grad = loss_gradient(stack, hammersley_sphere(8), gt, lam=0.0, spatial_weight=0.0)
        assert not grad[..., POSITION].any()
        assert grad[..., :3].any()

    def test_gradient_finite_differences_single_iteration(self, toy, rng):
        stack, gt = toy
        seeds = hammersley_sphere(6)
        _, grad = loss_gradient(stack, seeds, gt, iterations=1)
        values = stack.values
        eps = 1e-6
        for _ in range(10):
            idx = (rng.integers(16), rng.integers(32), rng.integers(6))
            up, down = values.copy(), values.copy()
            up[idx] += eps
            down[idx] -= eps
            fd = (loss_total(FeatureStack(up), seeds, gt, iterations=1).total
                  - loss_total(FeatureStack(down), seeds, gt, iterations=1).total) / (2 * eps)
            assert grad[idx] == pytest.approx(fd, rel=1e-4, abs=1e-9)


class TestTraining:
    def test_zero_learning_rate_keeps_weights_and_repeats_losses(self):
        data = band_dataset(3, GridShape(16, 32), seed=2)
        layers = init_feature_net(1, widths=(6, 4, 3))
        cfg = TrainConfig(k=8)
        result = train_toy(data, layers, steps=6, lr=0.0, cfg=cfg)
        for a, b in zip(layers, result.layers):
            assert np.array_equal(a.weight, b.weight)
        totals = [t[3] for t in result.trace]
        assert totals[:3] == totals[3:]

    def test_training_lowers_loss(self):
        data = band_dataset(4, GridShape(16, 32), seed=2)
        layers = init_feature_net(1, widths=(6, 8, 6))
        cfg = TrainConfig(k=8)
        before = dataset_loss(data, layers, cfg)
        result = train_toy(data, layers, steps=40, lr=0.3, cfg=cfg)
        assert dataset_loss(data, result.layers, cfg) < before

    def test_input_layers_not_modified(self):
        data = band_dataset(2, GridShape(16, 32), seed=2)
        layers = init_feature_net(1, widths=(6, 4, 3))
        copy = [l.weight.copy() for l in layers]
        train_toy(data, layers, steps=2, lr=0.5, cfg=TrainConfig(k=8))
        assert all(np.array_equal(a, l.weight) for a, l in zip(copy, layers))

    def test_divergence_is_reported(self):
        data = band_dataset(2, GridShape(16, 32), seed=2)
        layers = init_feature_net(1, widths=(6, 4, 3))
        with np.errstate(all="ignore"), pytest.raises(TrainingDiverged) as info:
            train_toy(data, layers, steps=20, lr=1e200, cfg=TrainConfig(k=8))
        assert info.value.last_finite is None or np.isfinite(info.value.last_finite)

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train_toy([], init_feature_net(0), steps=1, lr=0.1)
