"""Hot-loop kernels with a compiled core and a NumPy fallback.

At import time the package prefers the Cython extension and silently falls
back to the NumPy reference when the extension is missing (source checkout,
build without a compiler). Setting PROMPTCOUNT_PURE_PY=1 forces the fallback,
which the cross-backend tests and the benchmark use to pin both paths down.

Both backends produce bit-identical IoU and dedup results; the splat kernel
agrees to float64 round-off.
"""

from __future__ import annotations

import os

import numpy as np

from . import _ref

if os.environ.get("PROMPTCOUNT_PURE_PY") == "1":
    _impl = _ref
    BACKEND = "numpy"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _ref
        BACKEND = "numpy"

__all__ = ["BACKEND", "pairwise_iou", "dedup_keep", "gaussian_splat"]


def _as_boxes(arr: object, name: str) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != 4:
        raise ValueError(f"{name} must have shape (N, 4), got {out.shape}")
    return out


def pairwise_iou(a: object, b: object) -> np.ndarray:
    """IoU matrix between two box arrays, shape (len(a), len(b)), float64."""
    a = _as_boxes(a, "a")
    b = _as_boxes(b, "b")
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    return np.asarray(_impl.pairwise_iou(a, b))


def dedup_keep(negatives: object, positives: object, tau_iou: float) -> np.ndarray:
    """Boolean keep mask over negatives: True iff IoU < tau_iou vs every positive."""
    neg = _as_boxes(negatives, "negatives")
    pos = _as_boxes(positives, "positives")
    if neg.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    return np.asarray(_impl.dedup_keep(neg, pos, float(tau_iou))).astype(bool)


def gaussian_splat(
    points: object,
    height: int,
    width: int,
    sigma: float,
    truncate: float = 4.0,
    scale: float = 1.0,
) -> np.ndarray:
    """Sum of truncated Gaussians (one per (x, y) point) on an (H, W) float64 grid.

    Each point contributes exactly `scale` to the total mass; points whose
    truncation window misses every pixel center collapse onto the nearest
    pixel instead of vanishing.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros((height, width), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"points must have shape (N, 2), got {pts.shape}")
    if height <= 0 or width <= 0:
        raise ValueError(f"grid must be non-empty, got {height}x{width}")
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return np.asarray(
        _impl.gaussian_splat(pts, int(height), int(width), float(sigma), float(truncate), float(scale))
    )
