"""Datasets: counting records, class-disjoint splits, synthetic generation, io.

A CountingRecord bundles an image with its class name, dot annotations, and
optional annotated exemplar boxes. Synthetic records additionally keep their
scene, which the detection oracle reads; records ingested from annotation
files have no scene and require an external detector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigurationError
from .geometry import Box
from .images import load_png, save_png
from .scenes import (
    SHAPE_CLASSES,
    SyntheticScene,
    generate_scene,
    render_scene,
    scene_from_dict,
    scene_to_dict,
)

__all__ = [
    "CountingRecord",
    "DatasetSplit",
    "SyntheticSpec",
    "split_by_class",
    "split_by_class_names",
    "synthesize_dataset",
    "save_dataset",
    "load_dataset",
    "load_annotated_dataset",
]


@dataclass(frozen=True)
class CountingRecord:
    image_id: str
    image: np.ndarray
    class_name: str
    points: np.ndarray
    exemplar_boxes: tuple[Box, ...] = ()
    scene: Optional[SyntheticScene] = None
    image_path: Optional[str] = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        h, w = self.image.shape[:2]
        for i, (x, y) in enumerate(pts):
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(
                    f"{self.image_id}: point {i} at ({x}, {y}) outside {w}x{h} image"
                )
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "exemplar_boxes", tuple(self.exemplar_boxes))

    @property
    def count(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[CountingRecord, ...]
    val: tuple[CountingRecord, ...]
    test: tuple[CountingRecord, ...]

    def __post_init__(self) -> None:
        names = [
            {r.class_name for r in part} for part in (self.train, self.val, self.test)
        ]
        for i in range(3):
            for j in range(i + 1, 3):
                shared = names[i] & names[j]
                if shared:
                    raise ConfigurationError(
                        f"splits must be class-disjoint; shared classes: {sorted(shared)}"
                    )
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "val", tuple(self.val))
        object.__setattr__(self, "test", tuple(self.test))

    @property
    def parts(self) -> dict[str, tuple[CountingRecord, ...]]:
        return {"train": self.train, "val": self.val, "test": self.test}


def split_by_class(
    records: Sequence[CountingRecord],
    ratios: tuple[float, float, float] = (6.0, 2.0, 2.0),
    seed: int = 0,
) -> DatasetSplit:
    """Partition CLASSES (not images) into train/val/test by a seeded shuffle.

    Ratios apply to the number of distinct classes; every split receives at
    least one class, which requires at least three distinct classes.
    """
    if any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ConfigurationError(f"ratios must be nonnegative with positive sum: {ratios}")
    classes = sorted({r.class_name for r in records})
    if len(classes) < 3:
        raise ConfigurationError(
            f"need at least 3 distinct classes to split, got {len(classes)}"
        )
    rng = np.random.default_rng(seed)
    order = [classes[i] for i in rng.permutation(len(classes))]
    n = len(classes)
    total = float(sum(ratios))
    n_train = int(round(n * ratios[0] / total))
    n_val = int(round(n * ratios[1] / total))
    n_train = min(max(n_train, 1), n - 2)
    n_val = min(max(n_val, 1), n - n_train - 1)
    train_classes = order[:n_train]
    val_classes = order[n_train : n_train + n_val]
    test_classes = order[n_train + n_val :]
    return split_by_class_names(records, train_classes, val_classes, test_classes)


def split_by_class_names(
    records: Sequence[CountingRecord],
    train_classes: Sequence[str],
    val_classes: Sequence[str],
    test_classes: Sequence[str],
) -> DatasetSplit:
    """Explicit class assignment; the three class lists must cover every record."""
    tr, va, te = set(train_classes), set(val_classes), set(test_classes)
    observed = {r.class_name for r in records}
    missing = observed - (tr | va | te)
    if missing:
        raise ConfigurationError(f"classes not assigned to any split: {sorted(missing)}")
    return DatasetSplit(
        train=tuple(r for r in records if r.class_name in tr),
        val=tuple(r for r in records if r.class_name in va),
        test=tuple(r for r in records if r.class_name in te),
    )


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic dataset.

    images_per_class may be a single count applied to every class or one
    count per class (same order as `classes`).
    """

    classes: tuple[str, ...] = SHAPE_CLASSES[:3]
    images_per_class: Union[int, tuple[int, ...]] = 10
    count_min: int = 3
    count_max: int = 12
    distractor_rate: float = 0.0
    width: int = 64
    height: int = 64
    exemplars_per_image: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(self.classes))
        if len(self.classes) < 3:
            raise ConfigurationError(
                f"spec needs at least 3 classes, got {len(self.classes)}"
            )
        unknown = [c for c in self.classes if c not in SHAPE_CLASSES]
        if unknown:
            raise ConfigurationError(f"unknown shape classes: {unknown}")
        counts = self.per_class_counts()
        if len(counts) != len(self.classes) or any(c < 1 for c in counts):
            raise ConfigurationError(
                f"images_per_class must be positive, one value or one per class: "
                f"{self.images_per_class!r}"
            )
        if not (1 <= self.count_min <= self.count_max):
            raise ConfigurationError(
                f"need 1 <= count_min <= count_max, got [{self.count_min}, {self.count_max}]"
            )
        if self.distractor_rate < 0:
            raise ConfigurationError(
                f"distractor_rate must be nonnegative, got {self.distractor_rate}"
            )
        if self.exemplars_per_image < 1:
            raise ConfigurationError(
                f"exemplars_per_image must be >= 1, got {self.exemplars_per_image}"
            )

    def per_class_counts(self) -> tuple[int, ...]:
        if isinstance(self.images_per_class, int):
            return tuple([self.images_per_class] * len(self.classes))
        return tuple(int(c) for c in self.images_per_class)

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "images_per_class": (
                self.images_per_class
                if isinstance(self.images_per_class, int)
                else list(self.images_per_class)
            ),
            "count_min": self.count_min,
            "count_max": self.count_max,
            "distractor_rate": self.distractor_rate,
            "width": self.width,
            "height": self.height,
            "exemplars_per_image": self.exemplars_per_image,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        ipc = data.get("images_per_class", 10)
        return cls(
            classes=tuple(data.get("classes", SHAPE_CLASSES[:3])),
            images_per_class=ipc if isinstance(ipc, int) else tuple(ipc),
            count_min=int(data.get("count_min", 3)),
            count_max=int(data.get("count_max", 12)),
            distractor_rate=float(data.get("distractor_rate", 0.0)),
            width=int(data.get("width", 64)),
            height=int(data.get("height", 64)),
            exemplars_per_image=int(data.get("exemplars_per_image", 3)),
        )


def synthesize_dataset(spec: SyntheticSpec, seed: int = 0) -> list[CountingRecord]:
    """Seeded scenes -> records with dots at target centers and exemplar boxes."""
    records: list[CountingRecord] = []
    for ci, (cls, n_images) in enumerate(zip(spec.classes, spec.per_class_counts())):
        for j in range(n_images):
            ss = np.random.SeedSequence([int(seed), ci, j])
            rng = np.random.default_rng(ss)
            scene_seed = int(ss.generate_state(1)[0])
            n_objects = int(rng.integers(spec.count_min, spec.count_max + 1))
            scene = generate_scene(
                cls,
                n_objects,
                seed=scene_seed,
                width=spec.width,
                height=spec.height,
                distractor_rate=spec.distractor_rate,
            )
            exemplars = tuple(
                o.box for o in scene.objects[: spec.exemplars_per_image]
            )
            records.append(
                CountingRecord(
                    image_id=f"{cls}_{j:03d}",
                    image=render_scene(scene),
                    class_name=cls,
                    points=scene.points,
                    exemplar_boxes=exemplars,
                    scene=scene,
                )
            )
    return records


def save_dataset(directory: Union[str, Path], records: Sequence[CountingRecord]) -> None:
    """Write images/<id>.png plus a single annotations.json with all metadata."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    ann: dict[str, dict] = {}
    for rec in records:
        save_png(root / "images" / f"{rec.image_id}.png", rec.image)
        entry = {
            "class": rec.class_name,
            "points": [[float(x), float(y)] for x, y in rec.points],
            "box_examples": [list(b.as_tuple()) for b in rec.exemplar_boxes],
        }
        if rec.scene is not None:
            entry["scene"] = scene_to_dict(rec.scene)
        ann[rec.image_id] = entry
    (root / "annotations.json").write_text(json.dumps(ann, indent=2, sort_keys=True))


def load_dataset(directory: Union[str, Path]) -> list[CountingRecord]:
    root = Path(directory)
    ann_path = root / "annotations.json"
    if not ann_path.exists():
        raise ConfigurationError(f"no annotations.json under {root}")
    ann = json.loads(ann_path.read_text())
    records = []
    for image_id in sorted(ann):
        entry = ann[image_id]
        image_file = root / "images" / f"{image_id}.png"
        records.append(
            CountingRecord(
                image_id=image_id,
                image=load_png(image_file),
                class_name=entry["class"],
                points=np.asarray(entry["points"], dtype=np.float64).reshape(-1, 2),
                exemplar_boxes=tuple(Box(*b) for b in entry.get("box_examples", [])),
                scene=scene_from_dict(entry["scene"]) if "scene" in entry else None,
                image_path=str(image_file),
            )
        )
    return records


def load_annotated_dataset(
    annotation_path: Union[str, Path],
    class_map_path: Union[str, Path],
    images_dir: Union[str, Path],
) -> list[CountingRecord]:
    """Ingest {image -> {points, box_examples}} JSON plus an image->class map file.

    The class map is a text file with one `image_name<whitespace>class name`
    entry per line. Only images present in both files become records.
    """
    ann = json.loads(Path(annotation_path).read_text())
    class_map: dict[str, str] = {}
    for line in Path(class_map_path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise ConfigurationError(f"malformed class-map line: {line!r}")
        class_map[parts[0]] = parts[1].strip()
    records = []
    for image_name in sorted(ann):
        if image_name not in class_map:
            continue
        entry = ann[image_name]
        image_file = Path(images_dir) / image_name
        records.append(
            CountingRecord(
                image_id=image_name,
                image=load_png(image_file),
                class_name=class_map[image_name],
                points=np.asarray(entry.get("points", []), dtype=np.float64).reshape(-1, 2),
                exemplar_boxes=tuple(
                    Box(*b) for b in entry.get("box_examples", [])
                ),
                scene=None,
                image_path=str(image_file),
            )
        )
    return records
