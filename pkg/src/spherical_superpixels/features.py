"""Per-pixel features and horizontally circular convolutions.

The feature stack of an equirectangular image is ``[Lab | xyz | learned]``:
Lab rescaled to ``[-1, 1]`` with fixed bounds, the unit-sphere position of
the pixel, and optional channels from a small convolutional net. Layers pad
circularly across the left/right seam and replicate the top/bottom rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage.color import rgb2lab

from .geometry import GridShape, SphereGrid

COLOR = slice(0, 3)
POSITION = slice(3, 6)
N_BASE = 6

# Fixed Lab bounds: L in [0, 100], a and b in [-128, 127].
LAB_LOW = np.array([0.0, -128.0, -128.0])
LAB_HIGH = np.array([100.0, 127.0, 127.0])

PADDINGS = ("circular", "zero")
NET_INPUTS = {3: "lab", 6: "lab+xyz"}


def rgb_to_lab(image: np.ndarray) -> np.ndarray:
    """sRGB (0-255) to CIE Lab under D65."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (h, w, 3) RGB image, got shape {image.shape}")
    return rgb2lab(image.astype(np.float64) / 255.0)


def normalize_lab(lab: np.ndarray) -> np.ndarray:
    return 2.0 * (lab - LAB_LOW) / (LAB_HIGH - LAB_LOW) - 1.0


@dataclass(frozen=True, eq=False)
class FeatureStack:
    """``(h, w, d)`` features: 3 colour, 3 position, ``d - 6`` learned."""

    values: np.ndarray

    @property
    def shape(self) -> GridShape:
        return GridShape.of(self.values)

    @property
    def d(self) -> int:
        return self.values.shape[2]

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1, self.d)


def build_feature_stack(lab: np.ndarray, grid: SphereGrid, learned: np.ndarray | None = None) -> FeatureStack:
    if lab.shape[:2] != (grid.shape.h, grid.shape.w) or lab.shape[2] != 3:
        raise ValueError(f"Lab image {lab.shape} does not match grid {grid.shape.h}x{grid.shape.w}")
    parts = [normalize_lab(lab), grid.image]
    if learned is not None:
        if learned.shape[:2] != lab.shape[:2]:
            raise ValueError(f"learned channels {learned.shape} do not match image {lab.shape}")
        parts.append(learned)
    return FeatureStack(np.concatenate(parts, axis=2))


def base_stack(image: np.ndarray, grid: SphereGrid | None = None) -> FeatureStack:
    """Lab + xyz stack of an RGB image."""
    if grid is None:
        grid = SphereGrid.build(GridShape.of(image))
    return build_feature_stack(rgb_to_lab(image), grid)


@dataclass
class ConvSpec:
    """One convolution layer: weight ``(out, in, k, k)``, bias ``(out,)``."""

    weight: np.ndarray
    bias: np.ndarray
    padding: str = "circular"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        o, c, k, k2 = self.weight.shape
        if k != k2 or k % 2 == 0:
            raise ValueError(f"kernel must be square with odd size, got {k}x{k2}")
        if self.bias.shape != (o,):
            raise ValueError(f"bias shape {self.bias.shape} does not match {o} outputs")
        if self.padding not in PADDINGS:
            raise ValueError(f"unknown padding {self.padding!r}")
        if not np.all(np.isfinite(self.weight)):
            raise ValueError("non-finite weights")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]


def _pad_indices(n: int, r: int, wrap: bool) -> np.ndarray:
    idx = np.arange(-r, n + r)
    return idx % n if wrap else np.clip(idx, 0, n - 1)


def pad(x: np.ndarray, r: int, padding: str) -> np.ndarray:
    """Pad an ``(h, w, c)`` raster by ``r`` on every side."""
    if r == 0:
        return x
    if padding == "zero":
        return np.pad(x, ((r, r), (r, r), (0, 0)))
    h, w = x.shape[:2]
    return x[_pad_indices(h, r, wrap=False)][:, _pad_indices(w, r, wrap=True)]


def unpad_grad(g: np.ndarray, r: int, padding: str) -> np.ndarray:
    """Adjoint of :func:`pad`."""
    if r == 0:
        return g
    if padding == "zero":
        return g[r:-r, r:-r]
    hp, wp, c = g.shape
    h, w = hp - 2 * r, wp - 2 * r
    cols = np.zeros((hp, w, c))
    np.add.at(cols, (slice(None), _pad_indices(w, r, wrap=True)), g)
    out = np.zeros((h, w, c))
    np.add.at(out, _pad_indices(h, r, wrap=False), cols)
    return out


def conv2d_padded(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Cross-correlate an ``(h, w, c)`` raster; output keeps ``(h, w)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[2] != spec.in_channels:
        raise ValueError(f"layer expects {spec.in_channels} channels, got {x.shape[2]}")
    h, w = x.shape[:2]
    k = spec.kernel
    xp = pad(x, k // 2, spec.padding)
    out = np.broadcast_to(spec.bias, (h, w, spec.out_channels)).copy()
    # Fixed accumulation order per output element keeps this exactly
    # equivariant to horizontal rolls under circular padding.
    for u in range(k):
        for v in range(k):
            window = xp[u:u + h, v:v + w]
            for c in range(spec.in_channels):
                out += window[:, :, c:c + 1] * spec.weight[:, c, u, v]
    return out


def conv2d_backward(x: np.ndarray, spec: ConvSpec, grad_out: np.ndarray):
    """Gradients ``(d_input, d_weight, d_bias)`` of :func:`conv2d_padded`."""
    h, w = x.shape[:2]
    k = spec.kernel
    r = k // 2
    xp = pad(np.asarray(x, dtype=np.float64), r, spec.padding)
    d_weight = np.empty_like(spec.weight)
    d_xp = np.zeros(xp.shape)
    for u in range(k):
        for v in range(k):
            window = xp[u:u + h, v:v + w]
            d_weight[:, :, u, v] = np.einsum("hwo,hwc->oc", grad_out, window)
            d_xp[u:u + h, v:v + w] += np.einsum("hwo,oc->hwc", grad_out, spec.weight[:, :, u, v])
    d_bias = grad_out.sum(axis=(0, 1))
    return unpad_grad(d_xp, r, spec.padding), d_weight, d_bias


def feature_net_forward(x: np.ndarray, layers: list[ConvSpec], keep: bool = False):
    """Conv layers with ReLU between them (none after the last).

    With ``keep=True`` also returns the per-layer inputs needed by
    :func:`feature_net_backward`.
    """
    inputs = []
    for n, layer in enumerate(layers):
        if n and layers[n - 1].out_channels != layer.in_channels:
            raise ValueError(
                f"layer {n} expects {layer.in_channels} channels but layer {n - 1} "
                f"produces {layers[n - 1].out_channels}"
            )
        inputs.append(x)
        x = conv2d_padded(x, layer)
        if n < len(layers) - 1:
            x = np.maximum(x, 0.0)
    return (x, inputs) if keep else x


def feature_net_backward(inputs: list[np.ndarray], layers: list[ConvSpec], grad_out: np.ndarray):
    """Backpropagate through the net; returns ``(d_input, [(d_w, d_b), ...])``."""
    grads = [None] * len(layers)
    g = grad_out
    for n in range(len(layers) - 1, -1, -1):
        g, dw, db = conv2d_backward(inputs[n], layers[n], g)
        grads[n] = (dw, db)
        if n:
            g = g * (inputs[n] > 0.0)
    return g, grads


def init_feature_net(seed: int, widths=(N_BASE, 16, 14), kernel: int = 3, padding: str = "circular",
                     scale: float = 1.0) -> list[ConvSpec]:
    """Random layers with He-style scaling; ``widths`` lists channel counts."""
    rng = np.random.default_rng(seed)
    layers = []
    for c_in, c_out in zip(widths[:-1], widths[1:]):
        std = scale * np.sqrt(2.0 / (c_in * kernel * kernel))
        layers.append(ConvSpec(rng.normal(0.0, std, (c_out, c_in, kernel, kernel)), np.zeros(c_out), padding))
    return layers


def with_padding(layers: list[ConvSpec], padding: str) -> list[ConvSpec]:
    return [ConvSpec(l.weight.copy(), l.bias.copy(), padding) for l in layers]


def net_input(base: np.ndarray, layers: list[ConvSpec]) -> np.ndarray:
    """Channels of a base stack that the net reads.

    A first layer with 6 inputs sees Lab and xyz; one with 3 inputs sees Lab
    only, which makes the net exactly equivariant to horizontal rolls when
    padding is circular (xyz rotates under a roll, Lab does not).
    """
    c = layers[0].in_channels
    if c not in NET_INPUTS:
        raise ValueError(f"first layer must read 3 (Lab) or 6 (Lab+xyz) channels, got {c}")
    return base[..., :c]


def learned_stack(image: np.ndarray, layers: list[ConvSpec] | None, grid: SphereGrid | None = None):
    """Feature stack of an RGB image with net channels appended."""
    stack = base_stack(image, grid)
    if not layers:
        return stack
    learned = feature_net_forward(net_input(stack.values, layers), layers)
    return FeatureStack(np.concatenate([stack.values, learned], axis=2))


# Serialisation: JSON floats use repr(), which round-trips float64 exactly.

def net_to_dict(layers: list[ConvSpec]) -> dict:
    return {
        "format": "conv-stack/1",
        "layers": [
            {
                "shape": list(l.weight.shape),
                "padding": l.padding,
                "weight": l.weight.ravel().tolist(),
                "bias": l.bias.tolist(),
            }
            for l in layers
        ],
    }


def net_from_dict(data: dict) -> list[ConvSpec]:
    layers = []
    for entry in data["layers"]:
        weight = np.array(entry["weight"], dtype=np.float64).reshape(entry["shape"])
        layers.append(ConvSpec(weight, np.array(entry["bias"], dtype=np.float64), entry["padding"]))
    return layers


def save_net(path, layers: list[ConvSpec]) -> None:
    Path(path).write_text(json.dumps(net_to_dict(layers)))


def load_net(path) -> list[ConvSpec]:
    return net_from_dict(json.loads(Path(path).read_text()))
