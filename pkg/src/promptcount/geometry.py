"""Axis-aligned box algebra: IoU and the negative-deduplication primitive.

Boxes are continuous rectangles in image coordinates, origin top-left.
Everything here is pure and operates on immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import _kernels
from .errors import GeometryError

__all__ = [
    "Box",
    "ScoredBox",
    "iou",
    "boxes_array",
    "pairwise_iou",
    "dedup_negatives",
]


@dataclass(frozen=True)
class Box:
    """Rectangle (x_min, y_min) to (x_max, y_max) with strictly positive area."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise GeometryError(f"box coordinates must be finite, got {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise GeometryError(
                f"box must have positive extent, got "
                f"x:[{self.x_min}, {self.x_max}] y:[{self.y_min}, {self.y_max}]"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def clipped(self, width: float, height: float) -> "Box":
        """Intersection with the image rectangle [0, width] x [0, height].

        Raises GeometryError when the box lies entirely outside the image.
        """
        x0 = min(max(self.x_min, 0.0), width)
        y0 = min(max(self.y_min, 0.0), height)
        x1 = min(max(self.x_max, 0.0), width)
        y1 = min(max(self.y_max, 0.0), height)
        if not (x0 < x1 and y0 < y1):
            raise GeometryError(
                f"box {self.as_tuple()} does not intersect a {width}x{height} image"
            )
        return Box(x0, y0, x1, y1)


@dataclass(frozen=True)
class ScoredBox:
    """A box paired with the detector confidence that produced it."""

    box: Box
    logit: float
    source_prompt: str = ""

    def __post_init__(self) -> None:
        if not math.isfinite(self.logit) or not (0.0 <= self.logit <= 1.0):
            raise GeometryError(f"logit must be finite and in [0, 1], got {self.logit}")


BoxLike = Union[Box, ScoredBox]


def _unwrap(b: BoxLike) -> Box:
    return b.box if isinstance(b, ScoredBox) else b


def iou(a: BoxLike, b: BoxLike) -> float:
    """Intersection over union of two boxes; 0 when disjoint, 1 when identical."""
    a = _unwrap(a)
    b = _unwrap(b)
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    return inter / union


def boxes_array(boxes: Sequence[BoxLike]) -> np.ndarray:
    """Stack boxes into an (N, 4) float64 xyxy array."""
    out = np.empty((len(boxes), 4), dtype=np.float64)
    for i, b in enumerate(boxes):
        out[i] = _unwrap(b).as_tuple()
    return out


def pairwise_iou(a: Sequence[BoxLike], b: Sequence[BoxLike]) -> np.ndarray:
    """IoU matrix of shape (len(a), len(b))."""
    return _kernels.pairwise_iou(boxes_array(a), boxes_array(b))


def dedup_negatives(
    negatives: Sequence[ScoredBox],
    positives: Sequence[BoxLike],
    tau_iou: float,
) -> list[ScoredBox]:
    """Keep the negatives whose IoU with EVERY positive is strictly below tau_iou.

    Input order is preserved. A tie at exactly tau_iou counts as overlap and
    the negative is dropped. With no positives every negative is kept.
    """
    if not (0.0 < tau_iou <= 1.0):
        raise ValueError(f"tau_iou must be in (0, 1], got {tau_iou}")
    if not negatives:
        return []
    if not positives:
        return list(negatives)
    keep = _kernels.dedup_keep(boxes_array(negatives), boxes_array(positives), tau_iou)
    return [n for n, k in zip(negatives, keep) if k]
