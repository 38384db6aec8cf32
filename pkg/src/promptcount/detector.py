"""Text-conditioned detection gateway.

Two implementations behind one interface: a deterministic synthetic oracle
that reads scene ground truth (with configurable corruptions), and an
adapter that talks to an out-of-process detector over a small JSON protocol,
either through a persistent subprocess or HTTP POST.

Oracle determinism: every random draw is keyed by the scene seed plus a
stream tag plus the object index, derived through SeedSequence. Per-object
logits deliberately do not depend on the prompt, so the same physical object
scores identically under its class prompt and the generic one.
"""

from __future__ import annotations

import hashlib
import json
import os
import shlex
import subprocess
import tempfile
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .data import CountingRecord
from .errors import ConfigurationError, GeometryError, ProtocolError, TransportError
from .geometry import Box, ScoredBox
from .images import save_png
from .scenes import SHAPE_CLASSES, SyntheticScene

__all__ = [
    "GENERIC_PROMPT",
    "NoiseSpec",
    "DetectionRequest",
    "DetectionResponse",
    "Detector",
    "SyntheticDetector",
    "ExternalDetector",
    "synthetic_detect",
    "parse_external_response",
    "make_detector",
    "ENDPOINT_ENV_VAR",
]

GENERIC_PROMPT = "object"
ENDPOINT_ENV_VAR = "PROMPTCOUNT_DETECTOR_ENDPOINT"

# Stream tags keep the oracle's independent random draws from colliding.
_TAG_LOGIT = 1
_TAG_JITTER = 2
_TAG_MERGE = 3
_TAG_SPURIOUS = 4
_TAG_LOGIT_NOISE = 5


def _prompt_int(prompt: str) -> int:
    digest = hashlib.sha256(prompt.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class NoiseSpec:
    """Corruptions applied by the synthetic oracle.

    jitter: stddev in pixels added to box corners.
    merge_rate: probability that a consecutive pair of matching objects is
        replaced by one union box (exercises the single-object filter).
    spurious: number of background boxes appended under every known prompt.
    logit_noise: stddev added to per-object logits (prompt-independent).
    """

    jitter: float = 0.0
    merge_rate: float = 0.0
    spurious: int = 0
    logit_noise: float = 0.0
    spurious_logit_range: tuple[float, float] = (0.02, 0.3)

    def __post_init__(self) -> None:
        if self.jitter < 0 or self.logit_noise < 0:
            raise ConfigurationError("noise magnitudes must be nonnegative")
        if not (0.0 <= self.merge_rate <= 1.0):
            raise ConfigurationError(f"merge_rate must be in [0, 1], got {self.merge_rate}")
        if self.spurious < 0:
            raise ConfigurationError(f"spurious must be nonnegative, got {self.spurious}")
        lo, hi = self.spurious_logit_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ConfigurationError(
                f"spurious_logit_range must be ordered within [0, 1], got {lo}, {hi}"
            )

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls()

    def to_dict(self) -> dict:
        return {
            "jitter": self.jitter,
            "merge_rate": self.merge_rate,
            "spurious": self.spurious,
            "logit_noise": self.logit_noise,
            "spurious_logit_range": list(self.spurious_logit_range),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSpec":
        rng = data.get("spurious_logit_range", (0.02, 0.3))
        return cls(
            jitter=float(data.get("jitter", 0.0)),
            merge_rate=float(data.get("merge_rate", 0.0)),
            spurious=int(data.get("spurious", 0)),
            logit_noise=float(data.get("logit_noise", 0.0)),
            spurious_logit_range=(float(rng[0]), float(rng[1])),
        )


@dataclass(frozen=True)
class DetectionRequest:
    image_ref: str
    prompt: str
    logit_threshold: float = 0.02

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ConfigurationError("prompt must be nonempty")
        if not (0.0 <= self.logit_threshold < 1.0):
            raise ConfigurationError(
                f"logit_threshold must be in [0, 1), got {self.logit_threshold}"
            )


@dataclass(frozen=True)
class DetectionResponse:
    boxes: tuple[ScoredBox, ...]
    prompt_echo: str
    detector_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", tuple(self.boxes))


def _sort_candidates(entries: list[tuple[ScoredBox, int]]) -> tuple[ScoredBox, ...]:
    """Total order: logit desc, then area desc, then insertion index asc."""
    entries = sorted(entries, key=lambda e: (-e[0].logit, -e[0].box.area, e[1]))
    return tuple(e[0] for e in entries)


def _jittered_box(
    box: Box, rng: np.random.Generator, jitter: float, width: int, height: int
) -> Box:
    delta = rng.normal(0.0, jitter, size=4)
    x0, x1 = sorted((box.x_min + delta[0], box.x_max + delta[1]))
    y0, y1 = sorted((box.y_min + delta[2], box.y_max + delta[3]))
    if x1 - x0 < 0.5:
        cx = 0.5 * (x0 + x1)
        x0, x1 = cx - 0.25, cx + 0.25
    if y1 - y0 < 0.5:
        cy = 0.5 * (y0 + y1)
        y0, y1 = cy - 0.25, cy + 0.25
    try:
        return Box(x0, y0, x1, y1).clipped(float(width), float(height))
    except GeometryError:
        return box  # jitter pushed the box off-canvas; keep the clean one


def synthetic_detect(
    scene: SyntheticScene,
    prompt: str,
    noise: Optional[NoiseSpec] = None,
    logit_threshold: float = 0.0,
) -> DetectionResponse:
    """Ground-truth detection with seeded corruptions.

    The generic prompt returns every scene object; a class prompt returns the
    objects of that class; an unknown prompt returns nothing. Spurious boxes
    are appended under every known prompt, with identical geometry and logits
    regardless of the prompt.
    """
    if not prompt:
        raise ConfigurationError("prompt must be nonempty")
    noise = noise or NoiseSpec.none()
    known = prompt == GENERIC_PROMPT or prompt in SHAPE_CLASSES
    if not known:
        return DetectionResponse(boxes=(), prompt_echo=prompt, detector_id="synthetic")

    all_objects = scene.all_objects
    if prompt == GENERIC_PROMPT:
        matching = list(range(len(all_objects)))
    else:
        matching = [i for i, o in enumerate(all_objects) if o.class_name == prompt]

    prompt_key = _prompt_int(prompt)

    def obj_logit(i: int) -> float:
        rng = np.random.default_rng(np.random.SeedSequence([scene.seed, _TAG_LOGIT, i]))
        logit = float(rng.uniform(0.5, 1.0))
        if noise.logit_noise > 0:
            nrng = np.random.default_rng(
                np.random.SeedSequence([scene.seed, _TAG_LOGIT_NOISE, i])
            )
            logit += float(nrng.normal(0.0, noise.logit_noise))
        return min(max(logit, 0.0), 1.0)

    def obj_box(i: int) -> Box:
        box = all_objects[i].box
        if noise.jitter > 0:
            rng = np.random.default_rng(
                np.random.SeedSequence([scene.seed, _TAG_JITTER, prompt_key, i])
            )
            box = _jittered_box(box, rng, noise.jitter, scene.width, scene.height)
        return box

    candidates: list[tuple[Box, float]] = []
    merge_rng = np.random.default_rng(
        np.random.SeedSequence([scene.seed, _TAG_MERGE, prompt_key])
    )
    pos = 0
    while pos < len(matching):
        if pos + 1 < len(matching) and noise.merge_rate > 0 and (
            float(merge_rng.uniform()) < noise.merge_rate
        ):
            i, j = matching[pos], matching[pos + 1]
            a, b = obj_box(i), obj_box(j)
            union = Box(
                min(a.x_min, b.x_min),
                min(a.y_min, b.y_min),
                max(a.x_max, b.x_max),
                max(a.y_max, b.y_max),
            )
            candidates.append((union, min(1.0, max(obj_logit(i), obj_logit(j)) + 0.1)))
            pos += 2
        else:
            i = matching[pos]
            candidates.append((obj_box(i), obj_logit(i)))
            pos += 1

    for s in range(noise.spurious):
        rng = np.random.default_rng(np.random.SeedSequence([scene.seed, _TAG_SPURIOUS, s]))
        extent = float(rng.uniform(2.0, 5.0))
        extent = min(extent, scene.width / 2.0 - 0.5, scene.height / 2.0 - 0.5)
        cx = float(rng.uniform(extent, scene.width - extent))
        cy = float(rng.uniform(extent, scene.height - extent))
        lo, hi = noise.spurious_logit_range
        logit = float(rng.uniform(lo, hi))
        candidates.append((Box(cx - extent, cy - extent, cx + extent, cy + extent), logit))

    entries = [
        (ScoredBox(box=b, logit=l, source_prompt=prompt), idx)
        for idx, (b, l) in enumerate(candidates)
        if l >= logit_threshold
    ]
    return DetectionResponse(
        boxes=_sort_candidates(entries), prompt_echo=prompt, detector_id="synthetic"
    )


class Detector:
    """Interface: text-conditioned detection over counting records."""

    detector_id = "abstract"

    def detect_record(
        self, record: CountingRecord, prompt: str, logit_threshold: float
    ) -> DetectionResponse:
        raise NotImplementedError

    def detect(self, request: DetectionRequest) -> DetectionResponse:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self) -> "Detector":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class SyntheticDetector(Detector):
    """Oracle detector over scene-bearing records; pure and seed-deterministic."""

    detector_id = "synthetic"

    def __init__(
        self,
        noise: Optional[NoiseSpec] = None,
        scenes: Optional[dict[str, SyntheticScene]] = None,
    ):
        self.noise = noise or NoiseSpec.none()
        self.scenes = dict(scenes) if scenes else {}

    @classmethod
    def for_records(
        cls, records: Sequence[CountingRecord], noise: Optional[NoiseSpec] = None
    ) -> "SyntheticDetector":
        scenes = {}
        for r in records:
            if r.scene is not None:
                scenes[r.image_id] = r.scene
        return cls(noise=noise, scenes=scenes)

    def detect_record(
        self, record: CountingRecord, prompt: str, logit_threshold: float
    ) -> DetectionResponse:
        scene = record.scene or self.scenes.get(record.image_id)
        if scene is None:
            raise ConfigurationError(
                f"{record.image_id}: record carries no scene; "
                "the synthetic detector needs scene ground truth"
            )
        return synthetic_detect(scene, prompt, self.noise, logit_threshold)

    def detect(self, request: DetectionRequest) -> DetectionResponse:
        scene = self.scenes.get(request.image_ref)
        if scene is None:
            raise ConfigurationError(f"unknown image id {request.image_ref!r}")
        return synthetic_detect(scene, request.prompt, self.noise, request.logit_threshold)


def parse_external_response(
    raw: Union[bytes, str],
    logit_threshold: float,
    image_width: Optional[float] = None,
    image_height: Optional[float] = None,
    prompt_echo: str = "",
    detector_id: str = "external",
) -> DetectionResponse:
    """Validate and normalize a backend reply.

    Boxes are checked (shape, finiteness, logit range, orientation), clipped
    to the image when dimensions are known, threshold-filtered, and sorted.
    Boxes that fall entirely outside the image are dropped. Any structural
    defect raises a protocol error naming the offending record index.
    """
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace")
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"reply is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "boxes" not in payload:
        raise ProtocolError("reply must be an object with a 'boxes' field")
    if not isinstance(payload["boxes"], list):
        raise ProtocolError("'boxes' must be a list")

    entries: list[tuple[ScoredBox, int]] = []
    for i, rec in enumerate(payload["boxes"]):
        if not isinstance(rec, dict):
            raise ProtocolError("box record must be an object", record_index=i)
        if "xyxy" not in rec:
            raise ProtocolError("missing field 'xyxy'", record_index=i)
        if "logit" not in rec:
            raise ProtocolError("missing field 'logit'", record_index=i)
        xyxy = rec["xyxy"]
        if not isinstance(xyxy, (list, tuple)) or len(xyxy) != 4:
            raise ProtocolError(f"'xyxy' must be 4 numbers, got {xyxy!r}", record_index=i)
        try:
            x0, y0, x1, y1 = (float(v) for v in xyxy)
            logit = float(rec["logit"])
        except (TypeError, ValueError) as exc:
            raise ProtocolError(f"non-numeric value: {exc}", record_index=i) from exc
        if not all(np.isfinite(v) for v in (x0, y0, x1, y1, logit)):
            raise ProtocolError("non-finite value", record_index=i)
        if not (0.0 <= logit <= 1.0):
            raise ProtocolError(f"logit {logit} outside [0, 1]", record_index=i)
        if not (x0 < x1 and y0 < y1):
            raise ProtocolError(
                f"inverted or degenerate box [{x0}, {y0}, {x1}, {y1}]", record_index=i
            )
        box = Box(x0, y0, x1, y1)
        if image_width is not None and image_height is not None:
            try:
                box = box.clipped(float(image_width), float(image_height))
            except GeometryError:
                continue  # entirely outside the image
        if logit >= logit_threshold:
            entries.append((ScoredBox(box=box, logit=logit, source_prompt=prompt_echo), i))
    return DetectionResponse(
        boxes=_sort_candidates(entries), prompt_echo=prompt_echo, detector_id=detector_id
    )


class _SubprocessTransport:
    """Persistent line-delimited JSON child process; one request per line."""

    def __init__(self, command: str):
        self.command = command
        self._lock = threading.Lock()
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise TransportError(f"could not start detector backend {command!r}: {exc}")

    def exchange(self, request: dict) -> str:
        with self._lock:
            if self._proc.poll() is not None:
                raise TransportError(
                    f"detector backend exited with code {self._proc.returncode}"
                )
            try:
                assert self._proc.stdin is not None and self._proc.stdout is not None
                self._proc.stdin.write(json.dumps(request) + "\n")
                self._proc.stdin.flush()
                line = self._proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise TransportError(f"detector backend pipe failed: {exc}") from exc
            if not line:
                raise TransportError("detector backend closed its output stream")
            return line

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


class _HttpTransport:
    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def exchange(self, request: dict) -> str:
        req = urllib.request.Request(
            self.url,
            data=json.dumps(request).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.read().decode("utf-8")
        except urllib.error.URLError as exc:
            raise TransportError(f"detector backend at {self.url} unreachable: {exc}")

    def close(self) -> None:
        pass


class ExternalDetector(Detector):
    """Adapter speaking the JSON detection protocol to an out-of-process backend.

    Endpoint forms: an http(s) URL (one POST per request) or a shell command
    (persistent child process, one JSON line per request on stdin/stdout).
    """

    detector_id = "external"

    def __init__(self, endpoint: str):
        if not endpoint:
            raise ConfigurationError("external detector endpoint must be nonempty")
        self.endpoint = endpoint
        if endpoint.startswith("http://") or endpoint.startswith("https://"):
            self._transport: Union[_HttpTransport, _SubprocessTransport] = _HttpTransport(
                endpoint
            )
        else:
            self._transport = _SubprocessTransport(endpoint)
        self._tmpdir: Optional[tempfile.TemporaryDirectory] = None

    def _image_path(self, record: CountingRecord) -> str:
        if record.image_path and Path(record.image_path).exists():
            return record.image_path
        if self._tmpdir is None:
            self._tmpdir = tempfile.TemporaryDirectory(prefix="promptcount-detect-")
        path = Path(self._tmpdir.name) / f"{record.image_id}.png"
        if not path.exists():
            save_png(path, record.image)
        return str(path)

    def detect_record(
        self, record: CountingRecord, prompt: str, logit_threshold: float
    ) -> DetectionResponse:
        request = DetectionRequest(
            image_ref=self._image_path(record),
            prompt=prompt,
            logit_threshold=logit_threshold,
        )
        h, w = record.image.shape[:2]
        return self._detect(request, image_width=float(w), image_height=float(h))

    def detect(self, request: DetectionRequest) -> DetectionResponse:
        return self._detect(request)

    def _detect(
        self,
        request: DetectionRequest,
        image_width: Optional[float] = None,
        image_height: Optional[float] = None,
    ) -> DetectionResponse:
        raw = self._transport.exchange(
            {
                "image": request.image_ref,
                "prompt": request.prompt,
                "threshold": request.logit_threshold,
            }
        )
        return parse_external_response(
            raw,
            logit_threshold=request.logit_threshold,
            image_width=image_width,
            image_height=image_height,
            prompt_echo=request.prompt,
            detector_id=f"external:{self.endpoint}",
        )

    def close(self) -> None:
        self._transport.close()
        if self._tmpdir is not None:
            self._tmpdir.cleanup()
            self._tmpdir = None


def make_detector(
    spec: str,
    records: Sequence[CountingRecord] = (),
    noise: Optional[NoiseSpec] = None,
) -> Detector:
    """Build a detector from a CLI-style spec: 'synthetic' or 'external:<endpoint>'.

    The endpoint environment variable, when set, overrides the endpoint part
    of an external spec (and upgrades a bare 'external' spec).
    """
    env_endpoint = os.environ.get(ENDPOINT_ENV_VAR, "")
    if spec == "synthetic":
        return SyntheticDetector.for_records(records, noise=noise)
    if spec == "external" or spec.startswith("external:"):
        endpoint = spec.partition(":")[2]
        if env_endpoint:
            endpoint = env_endpoint
        if not endpoint:
            raise ConfigurationError(
                "external detector needs an endpoint: use external:<endpoint> "
                f"or set {ENDPOINT_ENV_VAR}"
            )
        return ExternalDetector(endpoint)
    raise ConfigurationError(
        f"unknown detector spec {spec!r}; expected 'synthetic' or 'external:<endpoint>'"
    )
