"""NumPy reference implementations of the hot kernels.

These are the fallback used when the compiled extension is unavailable and
the ground truth the extension is benchmarked against. The IoU arithmetic
is written with the exact same operation order as the compiled path so the
two backends produce bit-identical values.
"""

from __future__ import annotations

import math

import numpy as np


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs IoU between two (N, 4) / (M, 4) xyxy box arrays.

    Returns an (N, M) float64 matrix. Boxes are assumed valid
    (x_min < x_max, y_min < y_max), so every union is positive.
    """
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    iw = np.maximum(ix2 - ix1, 0.0)
    ih = np.maximum(iy2 - iy1, 0.0)
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def dedup_keep(negatives: np.ndarray, positives: np.ndarray, tau_iou: float) -> np.ndarray:
    """Keep mask for negative boxes: 1 iff IoU < tau_iou against EVERY positive.

    Ties at exactly tau_iou count as overlap (the box is dropped). With no
    positives every negative is kept.
    """
    n = negatives.shape[0]
    if positives.shape[0] == 0:
        return np.ones(n, dtype=np.uint8)
    matrix = pairwise_iou(negatives, positives)
    return (matrix < tau_iou).all(axis=1).astype(np.uint8)


def gaussian_splat(
    points: np.ndarray,
    height: int,
    width: int,
    sigma: float,
    truncate: float,
    scale: float,
) -> np.ndarray:
    """Accumulate one truncated, renormalized Gaussian per point onto a grid.

    Each point contributes exactly `scale` to the grid sum: the kernel is
    evaluated on the pixels inside the truncation window (clipped at the
    image border), then divided by its own windowed sum. A window that
    contains no pixel center degenerates to a unit mass on the nearest pixel.
    """
    grid = np.zeros((height, width), dtype=np.float64)
    radius = truncate * sigma
    inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma)
    for px, py in points:
        c0 = max(0, int(math.ceil(px - radius)))
        c1 = min(width - 1, int(math.floor(px + radius)))
        r0 = max(0, int(math.ceil(py - radius)))
        r1 = min(height - 1, int(math.floor(py + radius)))
        if c0 > c1 or r0 > r1:
            r = min(height - 1, max(0, int(math.floor(py + 0.5))))
            c = min(width - 1, max(0, int(math.floor(px + 0.5))))
            grid[r, c] += scale
            continue
        xs = np.arange(c0, c1 + 1, dtype=np.float64) - px
        ys = np.arange(r0, r1 + 1, dtype=np.float64) - py
        kernel = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) * inv_two_sigma_sq)
        total = kernel.sum()
        if total <= 0.0:
            r = min(height - 1, max(0, int(math.floor(py + 0.5))))
            c = min(width - 1, max(0, int(math.floor(px + 0.5))))
            grid[r, c] += scale
            continue
        grid[r0 : r1 + 1, c0 : c1 + 1] += kernel * (scale / total)
    return grid
