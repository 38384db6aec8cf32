"""Synthetic desk-scale scenes: colored geometric shapes on a plain canvas.

A scene is a fully deterministic function of its seed: object placement,
extents, and distractor classes are drawn from seeded generators, and
rendering is pure numpy rasterization, so repeated renders are byte
identical. Scenes carry their own ground truth (class, center, tight box
per object), which the detection oracle and dataset builder read directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import GenerationError
from .geometry import Box

__all__ = [
    "SHAPE_CLASSES",
    "SceneObject",
    "SyntheticScene",
    "generate_scene",
    "render_scene",
    "scene_to_dict",
    "scene_from_dict",
    "save_scene",
    "load_scene",
]

SHAPE_CLASSES = ("circle", "square", "triangle", "diamond", "ring", "cross")

# Hues separate the classes; luminance is matched (~100 on the 232-gray desk)
# so every class presents the same contrast against the background.
_PALETTE = {
    "circle": (214, 52, 52),
    "square": (52, 104, 210),
    "triangle": (36, 138, 66),
    "diamond": (152, 60, 160),
    "ring": (166, 84, 14),
    "cross": (100, 100, 110),
}

_BACKGROUND = (232, 232, 232)

_MIN_EXTENT = 2.5
_MAX_EXTENT = 4.5
_PLACEMENT_MARGIN = 1.0
_PLACEMENT_ATTEMPTS = 2000


@dataclass(frozen=True)
class SceneObject:
    """One shape instance; the tight bounding box is center +- extent."""

    class_name: str
    cx: float
    cy: float
    extent: float

    def __post_init__(self) -> None:
        if self.class_name not in SHAPE_CLASSES:
            raise ValueError(f"unknown shape class {self.class_name!r}")
        if self.extent <= 0:
            raise ValueError(f"extent must be positive, got {self.extent}")

    @property
    def box(self) -> Box:
        return Box(
            self.cx - self.extent,
            self.cy - self.extent,
            self.cx + self.extent,
            self.cy + self.extent,
        )

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)


@dataclass(frozen=True)
class SyntheticScene:
    width: int
    height: int
    class_name: str
    objects: tuple[SceneObject, ...]
    distractors: tuple[SceneObject, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        for obj in self.objects + self.distractors:
            b = obj.box
            if b.x_min < 0 or b.y_min < 0 or b.x_max > self.width or b.y_max > self.height:
                raise ValueError(
                    f"object at ({obj.cx}, {obj.cy}) extent {obj.extent} leaves the "
                    f"{self.width}x{self.height} canvas"
                )

    @property
    def all_objects(self) -> tuple[SceneObject, ...]:
        """Targets first, then distractors; index order is the insertion order."""
        return self.objects + self.distractors

    @property
    def points(self) -> np.ndarray:
        """(N, 2) centers of the target-class objects."""
        return np.array([o.center for o in self.objects], dtype=np.float64).reshape(-1, 2)


def generate_scene(
    class_name: str,
    n_objects: int,
    seed: int,
    width: int = 64,
    height: int = 64,
    distractor_rate: float = 0.0,
) -> SyntheticScene:
    """Place n_objects of class_name plus round(rate * n) distractors, no overlaps."""
    if class_name not in SHAPE_CLASSES:
        raise ValueError(f"unknown shape class {class_name!r}")
    if n_objects < 0:
        raise ValueError(f"n_objects must be nonnegative, got {n_objects}")
    if distractor_rate < 0:
        raise ValueError(f"distractor_rate must be nonnegative, got {distractor_rate}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5C3E]))
    n_distractors = int(round(distractor_rate * n_objects))
    other_classes = [c for c in SHAPE_CLASSES if c != class_name]
    classes = [class_name] * n_objects + [
        other_classes[int(rng.integers(len(other_classes)))] for _ in range(n_distractors)
    ]

    placed: list[SceneObject] = []
    for cls in classes:
        ok = False
        for _ in range(_PLACEMENT_ATTEMPTS):
            extent = float(rng.uniform(_MIN_EXTENT, _MAX_EXTENT))
            cx = float(rng.uniform(extent, width - extent))
            cy = float(rng.uniform(extent, height - extent))
            if all(
                (cx - p.cx) ** 2 + (cy - p.cy) ** 2
                >= (extent + p.extent + _PLACEMENT_MARGIN) ** 2
                for p in placed
            ):
                placed.append(SceneObject(cls, cx, cy, extent))
                ok = True
                break
        if not ok:
            raise GenerationError(
                f"could not place {len(classes)} objects on a {width}x{height} canvas "
                f"(seed {seed}); reduce counts or enlarge the canvas"
            )
    targets = tuple(o for o in placed if o.class_name == class_name)
    distractors = tuple(o for o in placed if o.class_name != class_name)
    return SyntheticScene(
        width=width,
        height=height,
        class_name=class_name,
        objects=targets,
        distractors=distractors,
        seed=int(seed),
    )


def _shape_mask(obj: SceneObject, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    dx = xs - obj.cx
    dy = ys - obj.cy
    r = obj.extent
    kind = obj.class_name
    if kind == "circle":
        return dx * dx + dy * dy <= r * r
    if kind == "ring":
        d2 = dx * dx + dy * dy
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    if kind == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if kind == "triangle":
        return (np.abs(dy) <= r) & (np.abs(dx) <= (dy + r) * 0.5)
    if kind == "diamond":
        return np.abs(dx) + np.abs(dy) <= r
    if kind == "cross":
        arm = 0.34 * r
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | (
            (np.abs(dy) <= arm) & (np.abs(dx) <= r)
        )
    raise ValueError(f"unknown shape class {kind!r}")


def render_scene(scene: SyntheticScene) -> np.ndarray:
    """Rasterize to (H, W, 3) uint8; pure function of the scene value."""
    img = np.empty((scene.height, scene.width, 3), dtype=np.uint8)
    img[:] = _BACKGROUND
    ys, xs = np.mgrid[0 : scene.height, 0 : scene.width]
    xs = xs.astype(np.float64)
    ys = ys.astype(np.float64)
    for obj in scene.all_objects:
        mask = _shape_mask(obj, xs, ys)
        img[mask] = _PALETTE[obj.class_name]
    return img


def scene_to_dict(scene: SyntheticScene) -> dict:
    def obj_dict(o: SceneObject) -> dict:
        return {"class": o.class_name, "cx": o.cx, "cy": o.cy, "extent": o.extent}

    return {
        "width": scene.width,
        "height": scene.height,
        "class": scene.class_name,
        "seed": scene.seed,
        "objects": [obj_dict(o) for o in scene.objects],
        "distractors": [obj_dict(o) for o in scene.distractors],
    }


def scene_from_dict(data: dict) -> SyntheticScene:
    def obj(d: dict) -> SceneObject:
        return SceneObject(d["class"], float(d["cx"]), float(d["cy"]), float(d["extent"]))

    return SyntheticScene(
        width=int(data["width"]),
        height=int(data["height"]),
        class_name=data["class"],
        objects=tuple(obj(d) for d in data["objects"]),
        distractors=tuple(obj(d) for d in data.get("distractors", [])),
        seed=int(data.get("seed", 0)),
    )


def save_scene(path: Union[str, Path], scene: SyntheticScene) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2, sort_keys=True))


def load_scene(path: Union[str, Path]) -> SyntheticScene:
    return scene_from_dict(json.loads(Path(path).read_text()))
