"""Overlay rendering: density heatmap blended onto the image, optional boxes.

The blend weight at each pixel is proportional to the normalized density, so
an all-zero map reproduces the input image byte for byte. Everything is pure
numpy over explicit inputs; the same inputs always produce the same bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .density import DensityMap
from .errors import ShapeMismatchError
from .geometry import Box
from .images import save_png

__all__ = ["colorize_density", "render_overlay", "render_overlay_file"]

_BOX_COLOR = (0, 255, 0)
_MAX_BLEND = 0.6


def colorize_density(grid: np.ndarray) -> np.ndarray:
    """Map a nonnegative grid to uint8 RGB, dark blue through red to yellow."""
    g = np.asarray(grid, dtype=np.float64)
    peak = g.max()
    t = g / peak if peak > 0 else np.zeros_like(g)
    r = np.clip(1.5 * t, 0.0, 1.0)
    gch = np.clip(1.5 * t - 0.75, 0.0, 1.0)
    b = np.clip(1.0 - 2.0 * t, 0.0, 1.0)
    return np.clip(
        np.rint(np.stack([r, gch, b], axis=-1) * 255.0), 0, 255
    ).astype(np.uint8)


def _draw_box(image: np.ndarray, box: Box) -> None:
    h, w = image.shape[:2]
    x0 = min(max(int(np.floor(box.x_min)), 0), w - 1)
    x1 = min(max(int(np.floor(box.x_max)), 0), w - 1)
    y0 = min(max(int(np.floor(box.y_min)), 0), h - 1)
    y1 = min(max(int(np.floor(box.y_max)), 0), h - 1)
    image[y0, x0 : x1 + 1] = _BOX_COLOR
    image[y1, x0 : x1 + 1] = _BOX_COLOR
    image[y0 : y1 + 1, x0] = _BOX_COLOR
    image[y0 : y1 + 1, x1] = _BOX_COLOR


def render_overlay(
    image: np.ndarray,
    density: DensityMap,
    boxes: Optional[Sequence[Box]] = None,
) -> np.ndarray:
    """Blend a colorized density map onto the image; draw boxes on top."""
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3) uint8, got {image.dtype} {image.shape}")
    if density.shape != image.shape[:2]:
        raise ShapeMismatchError(
            f"density shape {density.shape} does not match image {image.shape[:2]}"
        )
    peak = float(density.grid.max())
    if peak > 0:
        weight = (density.grid.astype(np.float64) / peak)[:, :, None] * _MAX_BLEND
        heat = colorize_density(density.grid).astype(np.float64)
        blended = image.astype(np.float64) * (1.0 - weight) + heat * weight
        out = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
    else:
        out = image.copy()
    for box in boxes or ():
        _draw_box(out, box)
    return out


def render_overlay_file(
    path: Union[str, Path],
    image: np.ndarray,
    density: DensityMap,
    boxes: Optional[Sequence[Box]] = None,
) -> None:
    save_png(path, render_overlay(image, density, boxes))
