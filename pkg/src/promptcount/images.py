"""Image helpers: PNG io, dtype conversion, subpixel crop and resize.

Images are (H, W, 3) uint8 arrays in storage and (H, W, 3) float32 in [0, 1]
at model boundaries. Resampling goes through Pillow with bilinear filtering,
which is deterministic for fixed inputs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from .errors import GeometryError
from .geometry import Box

__all__ = [
    "load_png",
    "save_png",
    "to_float",
    "to_uint8",
    "resize",
    "crop_resize",
    "sample_crop_box",
]


def load_png(path: Union[str, Path]) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_png(path: Union[str, Path], image: np.ndarray) -> None:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise ValueError(f"save_png expects uint8, got {arr.dtype}")
    Image.fromarray(arr, mode="RGB").save(str(path), format="PNG")


def to_float(image: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] -> float32 [0, 1]; float input is passed through as float32."""
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    return arr.astype(np.float32)


def to_uint8(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def _to_pil(image: np.ndarray) -> Image.Image:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    return Image.fromarray(arr, mode="RGB")


def resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize to (height, width); returns uint8."""
    if height <= 0 or width <= 0:
        raise ValueError(f"target size must be positive, got {height}x{width}")
    out = _to_pil(image).resize((width, height), Image.BILINEAR)
    return np.asarray(out, dtype=np.uint8)


def crop_resize(image: np.ndarray, box: Box, side: int) -> np.ndarray:
    """Crop exactly `box` (subpixel bounds allowed) and resize to side x side uint8."""
    if side <= 0:
        raise ValueError(f"side must be positive, got {side}")
    h, w = image.shape[:2]
    clipped = box.clipped(float(w), float(h))
    out = _to_pil(image).resize(
        (side, side),
        Image.BILINEAR,
        box=(clipped.x_min, clipped.y_min, clipped.x_max, clipped.y_max),
    )
    return np.asarray(out, dtype=np.uint8)


def sample_crop_box(
    rng: np.random.Generator,
    width: int,
    height: int,
    min_frac: float,
    max_frac: float,
) -> Box:
    """Random square crop box with side between min_frac and max_frac of min(W, H)."""
    if not (0.0 < min_frac <= max_frac <= 1.0):
        raise ValueError(f"need 0 < min_frac <= max_frac <= 1, got {min_frac}, {max_frac}")
    if width < 2 or height < 2:
        raise ValueError(f"canvas too small to crop: {width}x{height}")
    side = rng.uniform(min_frac, max_frac) * min(width, height)
    side = min(max(side, 2.0), float(min(width, height)))
    x0 = rng.uniform(0.0, width - side)
    y0 = rng.uniform(0.0, height - side)
    try:
        return Box(x0, y0, x0 + side, y0 + side)
    except GeometryError as exc:  # side exceeds canvas only on degenerate inputs
        raise ValueError(f"cannot place a {side:.1f}px crop in {width}x{height}") from exc
