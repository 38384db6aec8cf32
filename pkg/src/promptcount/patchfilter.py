"""Single-object patch filter: frozen embedding backbone + trainable 2-way head.

The backbone is an interface. The desk-scale implementation is a fixed,
seeded featurizer (pooled luminance grid, intensity histogram, random
projection) that needs no pretrained weights; an external pretrained encoder
drops in through CallableBackbone. Only the small feed-forward head learns.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import torch
from torch import nn

from .data import CountingRecord
from .errors import ConfigurationError, UsageError
from .geometry import Box
from .images import crop_resize, resize, sample_crop_box, to_float
from .serialization import load_archive, save_archive

__all__ = [
    "LABEL_SINGLE",
    "LABEL_MULTI",
    "EmbeddingBackbone",
    "DeskFeaturizer",
    "CallableBackbone",
    "LabeledPatchSet",
    "FilterConfig",
    "FilterHead",
    "FilterReport",
    "build_training_set",
    "train_filter",
    "classify",
    "classify_batch",
    "save_filter_head",
    "load_filter_head",
    "PatchClassifier",
]

LABEL_SINGLE = "single"
LABEL_MULTI = "multi"

_SINGLE = 1
_MULTI = 0


class EmbeddingBackbone:
    """Frozen patch embedder: identical input must give identical embedding."""

    name = "abstract"
    input_side: int = 32
    embed_dim: int = 0

    def embed(self, patches: np.ndarray) -> np.ndarray:
        """(N, S, S, 3) float32 in [0, 1] -> (N, embed_dim) float32."""
        raise NotImplementedError


class DeskFeaturizer(EmbeddingBackbone):
    """Deterministic training-free featurizer for desk-scale experiments.

    128 features per 32x32 patch: an 8x8 mean-pooled luminance grid (64),
    a 16-bin luminance histogram (16), and a fixed seeded random projection
    of the centered RGB pixels (48).
    """

    name = "desk-featurizer"
    input_side = 32
    embed_dim = 128

    _N_POOL = 64
    _N_HIST = 16
    _N_PROJ = 48

    def __init__(self, seed: int = 7):
        self.seed = seed
        rng = np.random.default_rng(seed)
        n_in = self.input_side * self.input_side * 3
        self._projection = (
            rng.standard_normal((n_in, self._N_PROJ)) / np.sqrt(n_in)
        ).astype(np.float32)

    def embed(self, patches: np.ndarray) -> np.ndarray:
        arr = np.asarray(patches, dtype=np.float32)
        if arr.ndim != 4 or arr.shape[1:] != (self.input_side, self.input_side, 3):
            raise ValueError(
                f"expected (N, {self.input_side}, {self.input_side}, 3), got {arr.shape}"
            )
        n = arr.shape[0]
        lum = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
        pool = lum.reshape(n, 8, 4, 8, 4).mean(axis=(2, 4)).reshape(n, self._N_POOL)
        edges = np.linspace(0.0, 1.0, self._N_HIST + 1)
        idx = np.clip(
            np.digitize(lum.reshape(n, -1), edges[1:-1]), 0, self._N_HIST - 1
        )
        hist = np.zeros((n, self._N_HIST), dtype=np.float32)
        for b in range(self._N_HIST):
            hist[:, b] = (idx == b).mean(axis=1)
        proj = (arr.reshape(n, -1) - 0.5) @ self._projection
        return np.concatenate([pool, hist, proj], axis=1).astype(np.float32)


class CallableBackbone(EmbeddingBackbone):
    """Adapter for an arbitrary embedding function (e.g. a pretrained encoder)."""

    def __init__(
        self,
        fn: Callable[[np.ndarray], np.ndarray],
        embed_dim: int,
        input_side: int = 32,
        name: str = "callable",
    ):
        self._fn = fn
        self.embed_dim = embed_dim
        self.input_side = input_side
        self.name = name

    def embed(self, patches: np.ndarray) -> np.ndarray:
        out = np.asarray(self._fn(np.asarray(patches, dtype=np.float32)), dtype=np.float32)
        if out.shape != (len(patches), self.embed_dim):
            raise ValueError(
                f"backbone returned shape {out.shape}, expected ({len(patches)}, {self.embed_dim})"
            )
        return out


@dataclass(frozen=True)
class LabeledPatchSet:
    """Patches with single/multi labels and a 7:3 train/eval assignment."""

    patches: np.ndarray
    labels: np.ndarray
    is_train: np.ndarray
    source_class: tuple[str, ...]
    skipped_records: int = 0

    def __post_init__(self) -> None:
        n = len(self.patches)
        if not (len(self.labels) == len(self.is_train) == len(self.source_class) == n):
            raise ValueError("patches, labels, split, and classes must align")
        if n:
            n_train = int(self.is_train.sum())
            if abs(n_train - 0.7 * n) > 1.0 + 1e-9:
                raise ValueError(
                    f"split must be 7:3 within one patch, got {n_train}/{n - n_train}"
                )

    @property
    def train_patches(self) -> np.ndarray:
        return self.patches[self.is_train]

    @property
    def train_labels(self) -> np.ndarray:
        return self.labels[self.is_train]

    @property
    def eval_patches(self) -> np.ndarray:
        return self.patches[~self.is_train]

    @property
    def eval_labels(self) -> np.ndarray:
        return self.labels[~self.is_train]


def _multi_crop(
    record: CountingRecord, rng: np.random.Generator, attempts: int = 200
) -> Box:
    """A random crop containing at least two dot annotations."""
    h, w = record.image.shape[:2]
    pts = record.points
    for _ in range(attempts):
        box = sample_crop_box(rng, w, h, 0.2, 0.8)
        inside = (
            (pts[:, 0] >= box.x_min)
            & (pts[:, 0] < box.x_max)
            & (pts[:, 1] >= box.y_min)
            & (pts[:, 1] < box.y_max)
        )
        if int(inside.sum()) >= 2:
            return box
    x0, y0 = pts.min(axis=0) - 2.0
    x1, y1 = pts.max(axis=0) + 2.0
    return Box(max(x0, 0.0), max(y0, 0.0), min(x1, float(w)), min(y1, float(h)))


def build_training_set(
    dataset: Sequence[CountingRecord],
    rng_seed: int = 0,
    patch_side: int = 32,
    multi_crops: int = 2,
) -> LabeledPatchSet:
    """Curate single/multi patches from annotated records.

    Singles are the annotated exemplar crops. Multis are the whole image plus
    `multi_crops` random crops that each cover at least two dots. Records
    without exemplar boxes or with fewer than two dots are skipped and
    counted. The 7:3 split keeps classes together except for at most one
    boundary class that is divided to land within one patch of the ratio.
    """
    rng = np.random.default_rng(rng_seed)
    patches: list[np.ndarray] = []
    labels: list[int] = []
    classes: list[str] = []
    skipped = 0
    for record in dataset:
        if not record.exemplar_boxes or record.count < 2:
            skipped += 1
            continue
        for box in record.exemplar_boxes:
            patches.append(to_float(crop_resize(record.image, box, patch_side)))
            labels.append(_SINGLE)
            classes.append(record.class_name)
        patches.append(to_float(resize(record.image, patch_side, patch_side)))
        labels.append(_MULTI)
        classes.append(record.class_name)
        for _ in range(multi_crops):
            box = _multi_crop(record, rng)
            patches.append(to_float(crop_resize(record.image, box, patch_side)))
            labels.append(_MULTI)
            classes.append(record.class_name)

    n = len(patches)
    if n == 0:
        return LabeledPatchSet(
            patches=np.zeros((0, patch_side, patch_side, 3), dtype=np.float32),
            labels=np.zeros(0, dtype=np.int64),
            is_train=np.zeros(0, dtype=bool),
            source_class=(),
            skipped_records=skipped,
        )

    target = int(round(0.7 * n))
    class_order = sorted(set(classes))
    class_order = [class_order[i] for i in rng.permutation(len(class_order))]
    is_train = np.zeros(n, dtype=bool)
    assigned = 0
    remaining = list(class_order)
    while remaining:
        cls = remaining[0]
        members = [i for i, c in enumerate(classes) if c == cls]
        if assigned + len(members) <= target:
            for i in members:
                is_train[i] = True
            assigned += len(members)
            remaining.pop(0)
        else:
            break
    if assigned < target and remaining:
        # Split one boundary class; shuffle its patches so both labels mix.
        cls = remaining[0]
        members = [i for i, c in enumerate(classes) if c == cls]
        members = [members[i] for i in rng.permutation(len(members))]
        for i in members[: target - assigned]:
            is_train[i] = True

    return LabeledPatchSet(
        patches=np.stack(patches).astype(np.float32),
        labels=np.asarray(labels, dtype=np.int64),
        is_train=is_train,
        source_class=tuple(classes),
        skipped_records=skipped,
    )


class FilterHead(nn.Module):
    """Two affine layers with a rectifier between, 2-way output."""

    def __init__(self, embed_dim: int, hidden: Optional[int] = None):
        super().__init__()
        if embed_dim < 1:
            raise ConfigurationError(f"embed_dim must be positive, got {embed_dim}")
        hidden = hidden or max(embed_dim // 2, 2)
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.fc1 = nn.Linear(embed_dim, hidden)
        self.fc2 = nn.Linear(hidden, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(x)))

    def probabilities(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.forward(x), dim=-1)


@dataclass(frozen=True)
class FilterConfig:
    # The head is a tiny MLP over frozen features; it needs an aggressive
    # learning rate and plenty of passes to converge on small patch sets.
    epochs: int = 300
    lr: float = 1e-2
    batch_size: int = 32
    seed: int = 0
    hidden: Optional[int] = None

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.lr <= 0 or self.batch_size < 1:
            raise ConfigurationError(
                f"epochs, lr, batch_size must be positive: "
                f"{self.epochs}, {self.lr}, {self.batch_size}"
            )


@dataclass(frozen=True)
class FilterReport:
    train_size: int
    eval_size: int
    eval_accuracy: float
    final_train_loss: float
    epochs: int


def train_filter(
    data: LabeledPatchSet,
    backbone: EmbeddingBackbone,
    config: Optional[FilterConfig] = None,
) -> tuple[FilterHead, FilterReport]:
    """Cross-entropy training of the head over frozen embeddings."""
    config = config or FilterConfig()
    train_labels = data.train_labels
    if len(train_labels) == 0:
        raise ConfigurationError("training split is empty")
    present = set(int(v) for v in np.unique(train_labels))
    if present != {_MULTI, _SINGLE}:
        raise ConfigurationError(
            "training split must contain both labels; got only "
            + (LABEL_SINGLE if present == {_SINGLE} else LABEL_MULTI)
        )

    x_train = torch.from_numpy(backbone.embed(data.train_patches))
    y_train = torch.from_numpy(train_labels)
    torch.manual_seed(config.seed)
    head = FilterHead(backbone.embed_dim, hidden=config.hidden)
    opt = torch.optim.Adam(head.parameters(), lr=config.lr)
    ce = nn.CrossEntropyLoss()
    gen = torch.Generator().manual_seed(config.seed)

    final_loss = float("nan")
    for _ in range(config.epochs):
        order = torch.randperm(len(x_train), generator=gen)
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            opt.zero_grad()
            loss = ce(head(x_train[idx]), y_train[idx])
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * len(idx)
        final_loss = epoch_loss / len(x_train)

    head.eval()
    if len(data.eval_labels):
        with torch.no_grad():
            x_eval = torch.from_numpy(backbone.embed(data.eval_patches))
            pred = head(x_eval).argmax(dim=1).numpy()
        accuracy = float((pred == data.eval_labels).mean())
    else:
        accuracy = float("nan")
    report = FilterReport(
        train_size=int(len(train_labels)),
        eval_size=int(len(data.eval_labels)),
        eval_accuracy=accuracy,
        final_train_loss=final_loss,
        epochs=config.epochs,
    )
    return head, report


def _prepare_patches(patches: np.ndarray, input_side: int) -> np.ndarray:
    arr = np.asarray(patches)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.shape[1] != input_side or arr.shape[2] != input_side:
        arr = np.stack([resize(p, input_side, input_side) for p in arr])
    return to_float(arr).reshape(-1, input_side, input_side, 3)


def classify_batch(
    patches: np.ndarray, backbone: EmbeddingBackbone, head: FilterHead
) -> tuple[list[str], np.ndarray]:
    """Labels and max-probability confidences for a batch of patches."""
    if head is None:
        raise UsageError("classifier head is not initialized")
    arr = _prepare_patches(patches, backbone.input_side)
    head.eval()
    with torch.no_grad():
        probs = head.probabilities(torch.from_numpy(backbone.embed(arr))).numpy()
    idx = probs.argmax(axis=1)
    labels = [LABEL_SINGLE if i == _SINGLE else LABEL_MULTI for i in idx]
    return labels, probs.max(axis=1)


def classify(
    patch: np.ndarray, backbone: EmbeddingBackbone, head: FilterHead
) -> tuple[str, float]:
    labels, confs = classify_batch(patch[None] if patch.ndim == 3 else patch, backbone, head)
    return labels[0], float(confs[0])


def save_filter_head(
    path: Union[str, Path], head: FilterHead, backbone: EmbeddingBackbone
) -> None:
    meta = {
        "kind": "filter-head",
        "embed_dim": head.embed_dim,
        "hidden": head.hidden,
        "backbone": backbone.name,
        "input_side": backbone.input_side,
    }
    tensors = {k: v.detach().numpy() for k, v in head.state_dict().items()}
    save_archive(path, meta, tensors)


def load_filter_head(path: Union[str, Path]) -> tuple[FilterHead, dict]:
    meta, tensors = load_archive(path)
    if meta.get("kind") != "filter-head":
        raise ConfigurationError(f"{path} is not a filter head (kind={meta.get('kind')!r})")
    head = FilterHead(int(meta["embed_dim"]), hidden=int(meta["hidden"]))
    state = {k: torch.from_numpy(v.copy()) for k, v in tensors.items()}
    head.load_state_dict(state)
    head.eval()
    return head, meta


class PatchClassifier:
    """Backbone + trained head bundled behind the classify interface."""

    def __init__(self, backbone: EmbeddingBackbone, head: FilterHead):
        self.backbone = backbone
        self.head = head

    @property
    def input_side(self) -> int:
        return self.backbone.input_side

    @classmethod
    def from_file(
        cls, path: Union[str, Path], backbone: Optional[EmbeddingBackbone] = None
    ) -> "PatchClassifier":
        head, meta = load_filter_head(path)
        backbone = backbone or DeskFeaturizer()
        if backbone.embed_dim != head.embed_dim:
            raise ConfigurationError(
                f"backbone dim {backbone.embed_dim} does not match head dim {head.embed_dim}"
            )
        return cls(backbone, head)

    def classify(self, patch: np.ndarray) -> tuple[str, float]:
        return classify(patch, self.backbone, self.head)

    def classify_many(self, patches: np.ndarray) -> tuple[list[str], np.ndarray]:
        return classify_batch(patches, self.backbone, self.head)

    def is_single(self, patch: np.ndarray) -> bool:
        return self.classify(patch)[0] == LABEL_SINGLE
