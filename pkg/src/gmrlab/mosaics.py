"""Component prototype and variance grids as image mosaics (PGM or PNG)."""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError
from .model import GmrModel


def _component_patches(model: GmrModel, kind: str) -> np.ndarray:
    """Each component's mean or variance reshaped to its field layout."""
    spec = model.fold_spec
    c = model.input_shape[2]
    if kind == "means":
        values = model.gmm.mu
    elif kind == "variances":
        values = model.gmm.sigma2
    else:
        raise ShapeError(f"unknown mosaic kind {kind!r}")
    return values.reshape(model.gmm.n_components, spec.fy, spec.fx, c)


def prototype_mosaic(model: GmrModel, kind: str = "means", pad: int = 1) -> np.ndarray:
    """Arrange component patches on a near-square grid as one uint8 image.

    Means are shown on the data scale [0, 1]; variances are normalized by
    their maximum so structure stays visible.
    """
    patches = _component_patches(model, kind)
    k, fy, fx, c = patches.shape
    if c != 1:
        patches = patches.mean(axis=3, keepdims=True)
    flat = patches[..., 0]
    if kind == "variances":
        flat = flat / max(flat.max(), 1e-12)
    flat = np.clip(flat, 0.0, 1.0)
    side = int(math.ceil(math.sqrt(k)))
    rows = int(math.ceil(k / side))
    out = np.zeros((rows * fy + (rows + 1) * pad, side * fx + (side + 1) * pad))
    for idx in range(k):
        r, q = divmod(idx, side)
        y0 = pad + r * (fy + pad)
        x0 = pad + q * (fx + pad)
        out[y0 : y0 + fy, x0 : x0 + fx] = flat[idx]
    return np.rint(out * 255.0).astype(np.uint8)


def save_pgm(image: np.ndarray, path) -> None:
    """Write a grayscale uint8 array as a binary PGM (P5) file."""
    if image.ndim != 2:
        raise ShapeError(f"PGM export needs a 2-D array, got shape {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(image.astype(np.uint8).tobytes())


def save_mosaic(image: np.ndarray, path) -> None:
    """Write PNG (via Pillow) or PGM depending on the file suffix."""
    path = str(path)
    if path.endswith(".pgm"):
        save_pgm(image, path)
        return
    from PIL import Image

    Image.fromarray(image, mode="L").save(path)
