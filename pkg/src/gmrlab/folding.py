"""Receptive-field extraction (fold) and its inverse for NHWC tensors.

A fold slides an fY x fX window with strides dY, dX over the spatial axes
and dumps each window, flattened row-major (rows outer, columns inner,
channels innermost), into the channel axis of the output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class FoldSpec:
    fx: int
    fy: int
    dx: int = 1
    dy: int = 1

    def __post_init__(self):
        if min(self.fx, self.fy, self.dx, self.dy) < 1:
            raise ShapeError(f"field sizes and strides must be >= 1, got {self}")

    def overlapping(self, h: int, w: int) -> bool:
        """Whether successive fields share pixels on an h x w input."""
        oh = 1 + (h - self.fy) // self.dy
        ow = 1 + (w - self.fx) // self.dx
        return (oh > 1 and self.dy < self.fy) or (ow > 1 and self.dx < self.fx)

    @classmethod
    def full_image(cls, h: int, w: int) -> "FoldSpec":
        return cls(fx=w, fy=h, dx=w, dy=h)


def fold_shape(h: int, w: int, c: int, spec: FoldSpec) -> tuple[int, int, int]:
    """Output sizes (H', W', C') for folding an H x W x C tensor."""
    if h < spec.fy or w < spec.fx:
        raise ShapeError(f"input {h}x{w} smaller than field {spec.fy}x{spec.fx}")
    if (h - spec.fy) % spec.dy or (w - spec.fx) % spec.dx:
        raise ShapeError(
            f"strides {spec.dy}x{spec.dx} do not evenly tile {h}x{w} "
            f"with field {spec.fy}x{spec.fx}"
        )
    return (
        1 + (h - spec.fy) // spec.dy,
        1 + (w - spec.fx) // spec.dx,
        spec.fx * spec.fy * c,
    )


def fold(x: np.ndarray, spec: FoldSpec) -> np.ndarray:
    """Extract flattened receptive-field columns from an NHWC tensor.

    Output element (n, i, j, (q*fx + p)*c + ch) equals input
    (n, i*dy + q, j*dx + p, ch).
    """
    if x.ndim != 4:
        raise ShapeError(f"expected NHWC tensor, got shape {x.shape}")
    n, h, w, c = x.shape
    oh, ow, oc = fold_shape(h, w, c, spec)
    windows = np.lib.stride_tricks.sliding_window_view(x, (spec.fy, spec.fx), axis=(1, 2))
    windows = windows[:, :: spec.dy, :: spec.dx]  # (N, H', W', C, fy, fx)
    windows = windows.transpose(0, 1, 2, 4, 5, 3)  # (N, H', W', fy, fx, C)
    return np.ascontiguousarray(windows).reshape(n, oh, ow, oc)


def unfold(x: np.ndarray, spec: FoldSpec, orig_h: int, orig_w: int, orig_c: int) -> np.ndarray:
    """Restore spatial layout from folded columns (non-overlapping specs only).

    Pixels not covered by any field (possible when strides exceed field
    sizes) come back as zeros.
    """
    if x.ndim != 4:
        raise ShapeError(f"expected NHWC tensor, got shape {x.shape}")
    oh, ow, oc = fold_shape(orig_h, orig_w, orig_c, spec)
    if spec.overlapping(orig_h, orig_w):
        raise ShapeError(
            f"cannot invert overlapping fold (need dx >= fx and dy >= fy, got {spec})"
        )
    n = x.shape[0]
    if x.shape[1:] != (oh, ow, oc):
        raise ShapeError(f"folded shape {x.shape[1:]} inconsistent with {(oh, ow, oc)}")
    cols = x.reshape(n, oh, ow, spec.fy, spec.fx, orig_c)
    out = np.zeros((n, orig_h, orig_w, orig_c), dtype=x.dtype)
    for i in range(oh):
        for j in range(ow):
            y0, x0 = i * spec.dy, j * spec.dx
            out[:, y0 : y0 + spec.fy, x0 : x0 + spec.fx, :] = cols[:, i, j]
    return out
