"""Training objective: cosine map similarity, contrastive and density terms.

The contrastive term compares the similarity of the positive-conditioned
density map to ground truth against the similarity of the negative-
conditioned map, as a two-way softmax cross-entropy:

    l_c = -log(exp(sim_pos) / (exp(sim_pos) + exp(sim_neg)))
        = softplus(sim_neg - sim_pos)

computed in the softplus form, which cannot overflow. The density term is
plain per-pixel mean squared error, and the total is their sum. Batch
aggregation is the mean of per-image totals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch

from .density import DensityMap
from .errors import ShapeMismatchError

__all__ = [
    "LossReport",
    "LossOutput",
    "similarity",
    "contrastive_loss",
    "density_loss",
    "total_loss",
    "batch_total_loss",
]

_EPS = 1e-8

MapLike = Union[DensityMap, np.ndarray, torch.Tensor]


def _as_tensor(x: MapLike) -> torch.Tensor:
    if isinstance(x, DensityMap):
        return torch.from_numpy(x.grid.astype(np.float64))
    if isinstance(x, np.ndarray):
        return torch.from_numpy(np.asarray(x, dtype=np.float64))
    return x


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(
            f"density maps must share a shape, got {tuple(a.shape)} and {tuple(b.shape)}"
        )


@dataclass(frozen=True)
class LossReport:
    """Scalar view of one loss evaluation, for logs and assertions."""

    l_c: float
    l_d: float
    l_total: float
    sim_pos: float
    sim_neg: float
    contrastive_active: bool

    def to_dict(self) -> dict:
        return {
            "l_c": self.l_c,
            "l_d": self.l_d,
            "l_total": self.l_total,
            "sim_pos": self.sim_pos,
            "sim_neg": self.sim_neg,
            "contrastive_active": self.contrastive_active,
        }


@dataclass(frozen=True)
class LossOutput:
    """Differentiable loss terms; `total` is the tensor to backpropagate."""

    total: torch.Tensor
    l_c: torch.Tensor
    l_d: torch.Tensor
    sim_pos: torch.Tensor
    sim_neg: torch.Tensor
    contrastive_active: bool

    def report(self) -> LossReport:
        return LossReport(
            l_c=float(self.l_c.detach()),
            l_d=float(self.l_d.detach()),
            l_total=float(self.total.detach()),
            sim_pos=float(self.sim_pos.detach()),
            sim_neg=float(self.sim_neg.detach()),
            contrastive_active=self.contrastive_active,
        )


def similarity(a: MapLike, b: MapLike) -> torch.Tensor:
    """Cosine similarity of the flattened grids; 0 when either map is all zero.

    The denominator is clamped from below at 1e-8, which leaves the value of
    any nonzero pair untouched while pinning the all-zero case to exactly 0.
    """
    ta, tb = _as_tensor(a), _as_tensor(b)
    _check_shapes(ta, tb)
    fa, fb = ta.reshape(-1), tb.reshape(-1)
    denom = torch.clamp(fa.norm() * fb.norm(), min=_EPS)
    return torch.dot(fa, fb) / denom


def contrastive_loss(
    d_pos: MapLike, d_gt: MapLike, d_neg: Optional[MapLike]
) -> torch.Tensor:
    """Two-way softmax loss over map similarities; 0 when no negative exists."""
    if d_neg is None:
        ref = _as_tensor(d_pos)
        return torch.zeros((), dtype=ref.dtype, device=ref.device)
    sim_pos = similarity(d_pos, d_gt)
    sim_neg = similarity(d_neg, d_gt)
    return torch.nn.functional.softplus(sim_neg - sim_pos)


def density_loss(d_pos: MapLike, d_gt: MapLike) -> torch.Tensor:
    """Per-pixel mean squared error."""
    tp, tg = _as_tensor(d_pos), _as_tensor(d_gt)
    _check_shapes(tp, tg)
    return ((tp - tg) ** 2).mean()


def total_loss(
    d_pos: MapLike, d_gt: MapLike, d_neg: Optional[MapLike] = None
) -> LossOutput:
    """Contrastive plus density terms for one image."""
    tp, tg = _as_tensor(d_pos), _as_tensor(d_gt)
    _check_shapes(tp, tg)
    l_d = density_loss(tp, tg)
    sim_pos = similarity(tp, tg)
    if d_neg is not None:
        tn = _as_tensor(d_neg)
        _check_shapes(tn, tg)
        sim_neg = similarity(tn, tg)
        l_c = torch.nn.functional.softplus(sim_neg - sim_pos)
        active = True
    else:
        sim_neg = torch.zeros_like(sim_pos)
        l_c = torch.zeros_like(l_d)
        active = False
    return LossOutput(
        total=l_c + l_d,
        l_c=l_c,
        l_d=l_d,
        sim_pos=sim_pos,
        sim_neg=sim_neg,
        contrastive_active=active,
    )


def batch_total_loss(
    d_pos: Sequence[MapLike],
    d_gt: Sequence[MapLike],
    d_neg: Sequence[Optional[MapLike]],
) -> tuple[torch.Tensor, list[LossOutput]]:
    """Mean of per-image totals; returns the per-image terms for logging."""
    if not (len(d_pos) == len(d_gt) == len(d_neg)):
        raise ShapeMismatchError(
            f"batch lists must align, got {len(d_pos)}, {len(d_gt)}, {len(d_neg)}"
        )
    if not d_pos:
        raise ValueError("batch must be nonempty")
    outputs = [total_loss(p, g, n) for p, g, n in zip(d_pos, d_gt, d_neg)]
    mean = torch.stack([o.total for o in outputs]).mean()
    return mean, outputs
