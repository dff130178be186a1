"""Image and label-map files.

Label maps are 16-bit grayscale PNGs (or CSV) with a JSON sidecar next to
them (``<file>.json``) holding the label count, shape and the resolved
configuration that produced them.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .metrics import boundary_mask

MAX_LABEL = 65535


def _target(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def read_image(path, resize: tuple[int, int] | None = None) -> np.ndarray:
    """Read a PNG/PPM as ``uint8 (h, w, 3)``; ``resize`` is ``(h, w)``."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if resize is not None:
            im = im.resize((resize[1], resize[0]), Image.BILINEAR)
        return np.asarray(im, dtype=np.uint8).copy()


def write_image(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(_target(path))


def read_labels(path, resize: tuple[int, int] | None = None) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        labels = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    else:
        with Image.open(path) as im:
            if resize is not None:
                im = im.resize((resize[1], resize[0]), Image.NEAREST)
            if im.mode in ("RGB", "RGBA", "P"):
                rgb = np.asarray(im.convert("RGB"), dtype=np.int64)
                # colour-coded maps: every distinct colour is a label
                code = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
                return np.unique(code, return_inverse=True)[1].reshape(code.shape)
            labels = np.asarray(im).astype(np.int64)
    if resize is not None and path.suffix.lower() == ".csv" and labels.shape != tuple(resize):
        raise ValueError("CSV label maps cannot be resized")
    return labels


def write_labels(path, labels: np.ndarray) -> None:
    """Write a label map as 16-bit PNG, or CSV when the suffix is ``.csv``."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > MAX_LABEL:
        raise ValueError(f"labels must lie in [0, {MAX_LABEL}] to be stored")
    path = _target(path)
    if path.suffix.lower() == ".csv":
        np.savetxt(path, labels, fmt="%d", delimiter=",")
    else:
        Image.fromarray(labels.astype(np.uint16)).save(path)


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_sidecar(path, payload: dict) -> Path:
    out = sidecar_path(path)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return out


def write_json(path, payload: dict) -> None:
    _target(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def boundary_overlay(image: np.ndarray, labels: np.ndarray, color=(255, 0, 0)) -> np.ndarray:
    out = np.array(image, dtype=np.uint8, copy=True)
    out[boundary_mask(labels)] = color
    return out
