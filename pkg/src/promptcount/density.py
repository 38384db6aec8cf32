"""Density maps: ground-truth generation from dot annotations and file io.

A density map is a nonnegative (H, W) float32 grid plus a positive scale
factor; the object count is grid.sum() / scale. Ground truth places one
truncated Gaussian per dot, renormalized in float64 so each dot contributes
exactly `scale` to the total mass even when its window is clipped at the
image border.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import _kernels
from .errors import FormatError

__all__ = [
    "DensityMap",
    "generate_density_map",
    "count_from_density",
    "write_density",
    "read_density",
    "save_density",
    "load_density",
]

_MAGIC = b"DMAP"
_VERSION = 1


@dataclass(frozen=True)
class DensityMap:
    grid: np.ndarray
    scale: float = 1.0

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid)
        if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
            raise ValueError(f"grid must be a non-empty 2-d array, got shape {grid.shape}")
        if grid.dtype != np.float32:
            grid = grid.astype(np.float32)
        if not np.isfinite(grid).all():
            raise ValueError("grid entries must be finite")
        if (grid < 0).any():
            raise ValueError("grid entries must be nonnegative")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape  # type: ignore[return-value]

    def count(self) -> float:
        return count_from_density(self)


def generate_density_map(
    points: Union[Sequence[tuple[float, float]], np.ndarray],
    height: int,
    width: int,
    sigma: float = 4.0,
    scale: float = 1.0,
    truncate: float = 4.0,
) -> DensityMap:
    """One renormalized truncated Gaussian per (x, y) dot; sum = scale * len(points)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    for i in range(pts.shape[0]):
        x, y = pts[i]
        if not (0.0 <= x < width and 0.0 <= y < height):
            raise ValueError(
                f"point {i} at ({x}, {y}) is outside the {width}x{height} image"
            )
    grid = _kernels.gaussian_splat(pts, height, width, sigma, truncate, scale)
    return DensityMap(grid=grid.astype(np.float32), scale=scale)


def count_from_density(density: DensityMap) -> float:
    """Object count represented by the map: total mass divided by scale."""
    return float(density.grid.sum(dtype=np.float64)) / density.scale


def write_density(density: DensityMap) -> bytes:
    h, w = density.shape
    header = _MAGIC + struct.pack("<BIIf", _VERSION, h, w, density.scale)
    payload = np.ascontiguousarray(density.grid, dtype="<f4").tobytes()
    return header + payload


def read_density(data: bytes) -> DensityMap:
    if len(data) < 4 or data[:4] != _MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {_MAGIC!r}", offset=0)
    if len(data) < 5:
        raise FormatError("truncated before version byte", offset=len(data))
    version = data[4]
    if version != _VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)
    if len(data) < 17:
        raise FormatError("truncated header", offset=len(data))
    h, w, scale = struct.unpack_from("<IIf", data, 5)
    if h < 1 or w < 1:
        raise FormatError(f"grid dimensions must be positive, got {h}x{w}", offset=5)
    if not (np.isfinite(scale) and scale > 0):
        raise FormatError(f"scale must be positive and finite, got {scale}", offset=13)
    expected = 17 + 4 * h * w
    if len(data) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, got {len(data)}",
            offset=len(data),
        )
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes", offset=expected)
    grid = np.frombuffer(data, dtype="<f4", count=h * w, offset=17).reshape(h, w)
    if not np.isfinite(grid).all():
        raise FormatError("grid contains non-finite values", offset=17)
    if (grid < 0).any():
        raise FormatError("grid contains negative values", offset=17)
    return DensityMap(grid=grid.copy(), scale=float(scale))


def save_density(path: Union[str, Path], density: DensityMap) -> None:
    Path(path).write_bytes(write_density(density))


def load_density(path: Union[str, Path]) -> DensityMap:
    return read_density(Path(path).read_bytes())
