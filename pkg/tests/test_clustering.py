import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spherical_superpixels import _parallel
from spherical_superpixels.clustering import (
    SuperpixelState,
    assign_hard,
    candidate_distances,
    channel_weights,
    cluster_hard,
    enforce_connectivity,
    initial_state,
    update_centroids,
    wrapped_components,
)
from spherical_superpixels.features import FeatureStack, base_stack
from spherical_superpixels.geometry import GridShape
from spherical_superpixels.sampling import hammersley_sphere
from spherical_superpixels.synthetic import band_image

from oracles import components_per_label, flood_components


@pytest.fixture
def band(rng):
    image, gt = band_image(GridShape(32, 64), 2, 3, 10.0, rng)
    return image, gt


class TestDistances:
    def test_against_brute_force(self, rng):
        f = rng.normal(size=(50, 8))
        c = rng.normal(size=(7, 8))
        cand = rng.integers(0, 7, size=(50, 4))
        wv = channel_weights(8, 3.5)
        got = candidate_distances(f, c, cand, wv)
        expected = np.array([[((f[p] - c[k]) ** 2 * wv).sum() for k in cand[p]] for p in range(50)])
        np.testing.assert_allclose(got, expected, rtol=1e-13)

    def test_weights(self):
        np.testing.assert_array_equal(channel_weights(8, 10.0), [1, 1, 1, 10, 10, 10, 1, 1])
        with pytest.raises(ValueError):
            channel_weights(6, -1.0)


class TestAssignAndUpdate:
    def test_assignment_is_candidate_argmin(self, band):
        stack = base_stack(band[0])
        state = initial_state(stack, hammersley_sphere(20))
        labels = assign_hard(stack, state, 10.0).ravel()
        cand = state.candidates
        wv = channel_weights(6, 10.0)
        for p in range(0, stack.shape.n, 7):
            d = [((stack.flat[p] - state.centroids[k]) ** 2 * wv).sum() for k in cand[p]]
            assert labels[p] == cand[p][int(np.argmin(d))]

    def test_tie_goes_to_first_candidate(self):
        f = np.zeros((2, 2, 6))
        state = SuperpixelState(np.zeros((3, 6)), np.eye(3), np.zeros((2, 2), int), np.array([[2, 0, 1]] * 3),
                                np.zeros((2, 2), int))
        assert np.all(assign_hard(FeatureStack(f), state) == 2)

    def test_update_means_and_carry_over(self, band):
        stack = base_stack(band[0])
        state = initial_state(stack, hammersley_sphere(12))
        labels = state.labels.copy()
        labels[labels == 5] = 4  # superpixel 5 becomes empty
        centroids, bary = update_centroids(stack, labels, 12, state)
        np.testing.assert_array_equal(centroids[5], state.centroids[5])
        np.testing.assert_array_equal(bary[5], state.barycenters[5])
        sel = labels.ravel() == 4
        np.testing.assert_allclose(centroids[4], stack.flat[sel].mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(bary, axis=1), 1.0)

    def test_empty_without_previous_raises(self, band):
        stack = base_stack(band[0])
        with pytest.raises(ValueError):
            update_centroids(stack, np.zeros(stack.shape.n, int), 3)


class TestClusterHard:
    def test_labels_stay_in_candidate_sets(self, band):
        stack = base_stack(band[0])
        state = cluster_hard(stack, hammersley_sphere(30), iterations=5)
        cand = state.candidates
        assert np.all((cand == state.labels.ravel()[:, None]).any(axis=1))
        assert state.labels.shape == (32, 64) and state.iterations == 5

    def test_objective_never_increases(self, band):
        trace = []
        cluster_hard(base_stack(band[0]), hammersley_sphere(30), iterations=8, trace=trace)
        assert all(b <= a * (1 + 1e-12) for a, b in zip(trace, trace[1:]))

    def test_k1(self, band):
        assert np.all(cluster_hard(base_stack(band[0]), hammersley_sphere(1)).labels == 0)

    def test_zero_iterations_rejected(self, band):
        with pytest.raises(ValueError):
            cluster_hard(base_stack(band[0]), hammersley_sphere(4), iterations=0)

    def test_thread_count_does_not_change_result(self, rng):
        image, _ = band_image(GridShape(128, 256), 2, 3, 10.0, rng)
        stack = base_stack(image)
        seeds = hammersley_sphere(80)
        one = cluster_hard(stack, seeds, threads=1)
        many = cluster_hard(stack, seeds, threads=8)
        assert np.array_equal(one.labels, many.labels)
        assert np.array_equal(one.centroids, many.centroids)

    def test_parallel_chunks_concatenate_in_order(self):
        out = _parallel.concat_map(lambda a, b: np.arange(a, b), 100_000, threads=8)
        np.testing.assert_array_equal(out, np.arange(100_000))


class TestConnectivity:
    def test_components_match_flood_fill(self, rng):
        labels = rng.integers(0, 3, size=(7, 11))
        comp = wrapped_components(labels)
        ref = flood_components(labels)
        # same partition, same numbering by first pixel
        np.testing.assert_array_equal(comp, ref)

    def test_seam_straddling_region_is_one_component(self):
        labels = np.zeros((4, 8), int)
        labels[:, [0, 7]] = 1
        assert components_per_label(labels)[1] == 1
        np.testing.assert_array_equal(enforce_connectivity(labels, 1), labels)

    def test_no_vertical_wrap(self):
        labels = np.zeros((4, 8), int)
        labels[0, :] = 1
        labels[3, :] = 1
        assert components_per_label(labels)[1] == 2

    def test_fragment_merges_into_neighbor(self):
        labels = np.zeros((6, 12), int)
        labels[:, 6:] = 1
        labels[2, 2] = 1  # stray pixel of label 1 inside label 0
        out = enforce_connectivity(labels, 4)
        assert out[2, 2] == 0
        assert components_per_label(out) == {0: 1, 1: 1}

    def test_small_label_is_absorbed(self):
        labels = np.zeros((6, 12), int)
        labels[:, 6:] = 1
        labels[0, 0] = 2
        out = enforce_connectivity(labels, 3)
        assert set(np.unique(out)) == {0, 1}

    @given(arrays(np.int64, (6, 10), elements=st.integers(0, 4)))
    def test_one_component_per_label(self, labels):
        out = enforce_connectivity(labels)
        assert all(n == 1 for n in components_per_label(out).values())
        assert set(np.unique(out)) <= set(np.unique(labels))

    def test_connected_input_unchanged(self, band):
        state = cluster_hard(base_stack(band[0]), hammersley_sphere(20))
        once = enforce_connectivity(state.labels)
        np.testing.assert_array_equal(enforce_connectivity(once, 0), once)


class TestSyntheticImages:
    def test_smooth_image_is_seamless(self, rng):
        from spherical_superpixels.synthetic import smooth_image

        img = smooth_image(GridShape(32, 64), rng).astype(float)
        seam = np.abs(img[:, 0] - img[:, -1]).mean()
        interior = np.abs(np.diff(img, axis=1)).mean()
        assert img.min() == 0 and img.max() == 255
        assert seam < 3 * interior

    def test_band_classes(self, rng):
        image, gt = band_image(GridShape(32, 64), 3, 4, 0.0, rng)
        assert set(np.unique(gt)) == set(range(12))
        # noise-free: one colour per class
        for c in range(12):
            assert len(np.unique(image[gt == c], axis=0)) == 1
