import numpy as np
import pytest

from spherical_superpixels.features import (
    ConvSpec,
    base_stack,
    conv2d_backward,
    conv2d_padded,
    feature_net_backward,
    feature_net_forward,
    init_feature_net,
    learned_stack,
    load_net,
    net_from_dict,
    net_to_dict,
    normalize_lab,
    rgb_to_lab,
    save_net,
)
from spherical_superpixels.geometry import GridShape, SphereGrid


def reference_conv(x, spec):
    """Direct loops over a padded copy built with np.pad."""
    r = spec.kernel // 2
    if spec.padding == "zero":
        xp = np.pad(x, ((r, r), (r, r), (0, 0)))
    else:
        xp = np.pad(x, ((0, 0), (r, r), (0, 0)), mode="wrap")
        xp = np.pad(xp, ((r, r), (0, 0), (0, 0)), mode="edge")
    h, w = x.shape[:2]
    out = np.zeros((h, w, spec.out_channels))
    for i in range(h):
        for j in range(w):
            patch = xp[i:i + spec.kernel, j:j + spec.kernel]  # (k, k, C)
            out[i, j] = np.einsum("uvc,ocuv->o", patch, spec.weight) + spec.bias
    return out


def random_spec(rng, c_in=3, c_out=4, k=3, padding="circular"):
    return ConvSpec(rng.normal(size=(c_out, c_in, k, k)), rng.normal(size=c_out), padding)


class TestColour:
    def test_mid_gray_reference(self):
        c = 128 / 255
        lin = ((c + 0.055) / 1.055) ** 2.4
        L = 116 * lin ** (1 / 3) - 16
        lab = rgb_to_lab(np.full((1, 1, 3), 128, dtype=np.uint8))[0, 0]
        assert lab[0] == pytest.approx(L, abs=1e-6)
        # matrix and white-point rounding leave a few thousandths of chroma
        np.testing.assert_allclose(lab[1:], 0.0, atol=5e-3)

    def test_normalization_bounds(self):
        lo = normalize_lab(np.array([0.0, -128.0, -128.0]))
        hi = normalize_lab(np.array([100.0, 127.0, 127.0]))
        np.testing.assert_allclose(lo, -1.0)
        np.testing.assert_allclose(hi, 1.0)

    def test_rejects_gray_image(self):
        with pytest.raises(ValueError):
            rgb_to_lab(np.zeros((4, 4)))


class TestFeatureStack:
    def test_layout(self, rng):
        image = rng.integers(0, 256, (6, 12, 3), dtype=np.uint8)
        stack = base_stack(image)
        assert stack.d == 6
        assert stack.shape == GridShape(6, 12)
        np.testing.assert_array_equal(stack.values[..., 3:], SphereGrid.build(GridShape(6, 12)).image)
        assert np.all(np.abs(stack.values[..., :3]) <= 1.0)

    def test_learned_width_14_gives_20_channels(self, rng):
        image = rng.integers(0, 256, (6, 12, 3), dtype=np.uint8)
        assert learned_stack(image, init_feature_net(0)).d == 20


class TestConvolution:
    @pytest.mark.parametrize("padding", ["circular", "zero"])
    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_matches_reference(self, rng, padding, k):
        x = rng.normal(size=(5, 7, 3))
        spec = random_spec(rng, k=k, padding=padding)
        np.testing.assert_allclose(conv2d_padded(x, spec), reference_conv(x, spec), rtol=1e-12, atol=1e-12)

    def test_circular_roll_equivariance_is_bitwise(self, rng):
        x = rng.normal(size=(6, 10, 3))
        spec = random_spec(rng)
        for s in range(10):
            assert np.array_equal(conv2d_padded(np.roll(x, s, axis=1), spec), np.roll(conv2d_padded(x, spec), s, axis=1))

    def test_zero_padding_breaks_roll_equivariance(self, rng):
        x = rng.normal(size=(6, 10, 3)) + 1.0
        spec = random_spec(rng, padding="zero")
        assert not np.allclose(conv2d_padded(np.roll(x, 3, axis=1), spec), np.roll(conv2d_padded(x, spec), 3, axis=1))

    @pytest.mark.parametrize("padding", ["circular", "zero"])
    def test_backward_finite_differences(self, rng, padding):
        x = rng.normal(size=(4, 6, 2))
        spec = random_spec(rng, c_in=2, c_out=3, padding=padding)
        g = rng.normal(size=(4, 6, 3))
        dx, dw, db = conv2d_backward(x, spec, g)

        def f(xx, ww, bb):
            return float((conv2d_padded(xx, ConvSpec(ww, bb, padding)) * g).sum())

        eps = 1e-6
        for idx in [(0, 0, 0), (3, 5, 1), (2, 0, 1), (0, 5, 0)]:
            e = np.zeros_like(x)
            e[idx] = eps
            fd = (f(x + e, spec.weight, spec.bias) - f(x - e, spec.weight, spec.bias)) / (2 * eps)
            assert dx[idx] == pytest.approx(fd, rel=1e-6, abs=1e-8)
        for idx in [(0, 0, 0, 0), (2, 1, 2, 1)]:
            e = np.zeros_like(spec.weight)
            e[idx] = eps
            fd = (f(x, spec.weight + e, spec.bias) - f(x, spec.weight - e, spec.bias)) / (2 * eps)
            assert dw[idx] == pytest.approx(fd, rel=1e-6, abs=1e-8)
        np.testing.assert_allclose(db, g.sum(axis=(0, 1)))

    @pytest.mark.parametrize("kwargs", [
        dict(weight=np.zeros((2, 3, 2, 2)), bias=np.zeros(2)),
        dict(weight=np.zeros((2, 3, 3, 3)), bias=np.zeros(3)),
        dict(weight=np.full((2, 3, 3, 3), np.inf), bias=np.zeros(2)),
        dict(weight=np.zeros((2, 3, 3, 3)), bias=np.zeros(2), padding="reflect"),
    ])
    def test_invalid_specs(self, kwargs):
        with pytest.raises(ValueError):
            ConvSpec(**kwargs)


class TestNet:
    def test_zero_weights_give_zero_channels(self, rng):
        layers = [ConvSpec(np.zeros((4, 6, 3, 3)), np.zeros(4)), ConvSpec(np.zeros((2, 4, 3, 3)), np.zeros(2))]
        out = feature_net_forward(rng.normal(size=(5, 8, 6)), layers)
        assert out.shape == (5, 8, 2) and not out.any()

    def test_identity_layer(self, rng):
        w = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        x = rng.normal(size=(4, 6, 3))
        np.testing.assert_array_equal(feature_net_forward(x, [ConvSpec(w, np.zeros(3))]), x)

    def test_channel_mismatch(self, rng):
        layers = [random_spec(rng, 3, 4), random_spec(rng, 5, 2)]
        with pytest.raises(ValueError):
            feature_net_forward(rng.normal(size=(4, 6, 3)), layers)

    def test_net_backward_finite_differences(self, rng):
        layers = init_feature_net(3, widths=(3, 4, 2))
        for l in layers:
            l.bias += 0.1
        x = rng.normal(size=(5, 8, 3))
        g = rng.normal(size=(5, 8, 2))
        out, inputs = feature_net_forward(x, layers, keep=True)
        dx, grads = feature_net_backward(inputs, layers, g)
        eps = 1e-6
        for idx in [(0, 0, 0), (4, 7, 2), (2, 3, 1)]:
            e = np.zeros_like(x)
            e[idx] = eps
            fd = ((feature_net_forward(x + e, layers) - feature_net_forward(x - e, layers)) * g).sum() / (2 * eps)
            assert dx[idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)
        w = layers[0].weight
        w[1, 2, 0, 1] += eps
        up = (feature_net_forward(x, layers) * g).sum()
        w[1, 2, 0, 1] -= 2 * eps
        down = (feature_net_forward(x, layers) * g).sum()
        w[1, 2, 0, 1] += eps
        assert grads[0][0][1, 2, 0, 1] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-8)

    def test_serialization_round_trip_is_exact(self, tmp_path):
        layers = init_feature_net(7, widths=(6, 5, 3), padding="zero")
        save_net(tmp_path / "net.json", layers)
        back = load_net(tmp_path / "net.json")
        for a, b in zip(layers, back):
            assert np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
            assert a.padding == b.padding
        assert net_to_dict(net_from_dict(net_to_dict(layers))) == net_to_dict(layers)

    def test_first_layer_selects_input(self, rng):
        image = rng.integers(0, 256, (6, 12, 3), dtype=np.uint8)
        assert learned_stack(image, init_feature_net(0, widths=(3, 4))).d == 10
        with pytest.raises(ValueError):
            learned_stack(image, init_feature_net(0, widths=(5, 4)))
