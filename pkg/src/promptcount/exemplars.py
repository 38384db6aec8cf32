"""Exemplar mining: propose, threshold, dedup, single-object filter, top-k.

Per image the pipeline asks the detector for class-prompt candidates
(positives) and generic-prompt candidates (raw negatives), removes negatives
that overlap any thresholded positive, filters both streams down to
single-object patches, and keeps the k highest-logit survivors per stream.

Empty streams are repaired by explicit fallbacks rather than silently
skipping the image: an empty positive stream first relaxes the classifier
(highest-logit unfiltered box), then halves the logit threshold once, then
errors; an empty negative stream is filled with seeded background crops that
avoid every positive, and when even that fails the image is marked so the
contrastive term stays inactive for it.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .data import CountingRecord
from .detector import GENERIC_PROMPT, Detector
from .errors import ConfigurationError, ExemplarSelectionError
from .geometry import Box, ScoredBox, dedup_negatives, pairwise_iou
from .images import crop_resize, load_png, sample_crop_box, to_float, to_uint8, save_png
from .patchfilter import LABEL_SINGLE, PatchClassifier

__all__ = [
    "FallbackPolicy",
    "PipelineConfig",
    "Exemplar",
    "ExemplarPair",
    "FilterResult",
    "propose_candidates",
    "filter_single_object",
    "select_top_k",
    "build_exemplar_pairs",
    "mine_exemplars",
    "save_exemplar_pair",
    "load_exemplar_pairs",
]

_MIN_CROP_PX = 2.0
_BACKGROUND_ATTEMPTS = 100


class FallbackPolicy(enum.Enum):
    LADDER = "ladder"
    STRICT = "strict"


@dataclass(frozen=True)
class PipelineConfig:
    tau_l: float = 0.02
    tau_iou: float = 0.5
    k: int = 3
    negative_prompt: str = GENERIC_PROMPT
    fallback: FallbackPolicy = FallbackPolicy.LADDER
    patch_side: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.tau_l < 1.0):
            raise ConfigurationError(f"tau_l must be in [0, 1), got {self.tau_l}")
        if not (0.0 < self.tau_iou <= 1.0):
            raise ConfigurationError(f"tau_iou must be in (0, 1], got {self.tau_iou}")
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        if not self.negative_prompt:
            raise ConfigurationError("negative_prompt must be nonempty")
        if self.patch_side < 4:
            raise ConfigurationError(f"patch_side must be >= 4, got {self.patch_side}")

    def to_dict(self) -> dict:
        return {
            "tau_l": self.tau_l,
            "tau_iou": self.tau_iou,
            "k": self.k,
            "negative_prompt": self.negative_prompt,
            "fallback": self.fallback.value,
            "patch_side": self.patch_side,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class Exemplar:
    """A cropped patch with the box and score it came from."""

    patch: np.ndarray
    box: Box
    logit: float
    source_prompt: str = ""
    classifier_confidence: Optional[float] = None


@dataclass(frozen=True)
class ExemplarPair:
    image_id: str
    positives: tuple[Exemplar, ...]
    negatives: tuple[Exemplar, ...]
    contrastive_active: bool = True
    fallback_used: tuple[str, ...] = ()
    skipped_small: int = 0


@dataclass(frozen=True)
class FilterResult:
    kept: tuple[ScoredBox, ...]
    confidences: tuple[float, ...]
    skipped_small: int


def propose_candidates(
    record: CountingRecord, detector: Detector, config: PipelineConfig
) -> tuple[list[ScoredBox], list[ScoredBox]]:
    """Class-prompt and generic-prompt candidates, both thresholded at tau_l."""
    if not record.class_name:
        raise ConfigurationError(f"{record.image_id}: record has no class name")
    positives = detector.detect_record(record, record.class_name, config.tau_l)
    negatives = detector.detect_record(record, config.negative_prompt, config.tau_l)
    return list(positives.boxes), list(negatives.boxes)


def filter_single_object(
    candidates: Sequence[ScoredBox],
    image: np.ndarray,
    classifier: PatchClassifier,
) -> FilterResult:
    """Keep candidates whose crop the classifier labels single; order preserved.

    Boxes narrower than 2 pixels on either side cannot be cropped meaningfully
    and are skipped; the count of skips is reported alongside the survivors.
    """
    kept: list[ScoredBox] = []
    confidences: list[float] = []
    skipped = 0
    for cand in candidates:
        if cand.box.width < _MIN_CROP_PX or cand.box.height < _MIN_CROP_PX:
            skipped += 1
            continue
        patch = crop_resize(image, cand.box, classifier.input_side)
        label, confidence = classifier.classify(patch)
        if label == LABEL_SINGLE:
            kept.append(cand)
            confidences.append(confidence)
    return FilterResult(
        kept=tuple(kept), confidences=tuple(confidences), skipped_small=skipped
    )


def select_top_k(candidates: Sequence[ScoredBox], k: int) -> list[ScoredBox]:
    """k highest-logit candidates, ties broken by area (descending) then input order."""
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    order = sorted(
        range(len(candidates)),
        key=lambda i: (-candidates[i].logit, -candidates[i].box.area, i),
    )
    return [candidates[i] for i in order[:k]]


def _crop(image: np.ndarray, box: Box, side: int) -> np.ndarray:
    return to_float(crop_resize(image, box, side))


def _background_negatives(
    record: CountingRecord,
    positives: Sequence[ScoredBox],
    config: PipelineConfig,
) -> list[ScoredBox]:
    """Up to k seeded crops that overlap no thresholded positive."""
    h, w = record.image.shape[:2]
    id_key = int.from_bytes(
        hashlib.sha256(record.image_id.encode("utf-8")).digest()[:8], "little"
    )
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, id_key]))
    pos_boxes = [p.box for p in positives]
    crops: list[ScoredBox] = []
    for _ in range(config.k):
        for _ in range(_BACKGROUND_ATTEMPTS):
            box = sample_crop_box(rng, w, h, 0.08, 0.25)
            if pos_boxes:
                ious = pairwise_iou([box], pos_boxes)[0]
                if not (ious < config.tau_iou).all():
                    continue
            crops.append(ScoredBox(box=box, logit=0.0, source_prompt="background"))
            break
    return crops


def build_exemplar_pairs(
    record: CountingRecord,
    detector: Detector,
    classifier: Optional[PatchClassifier],
    config: Optional[PipelineConfig] = None,
) -> ExemplarPair:
    """Run the full per-image pipeline and crop the selected patches.

    classifier=None disables the single-object filter (ablation mode); both
    streams then go straight from dedup to top-k.
    """
    config = config or PipelineConfig()
    fallback_used: list[str] = []
    skipped_small = 0

    def run_filter(cands: list[ScoredBox]) -> tuple[list[ScoredBox], dict[int, float]]:
        nonlocal skipped_small
        if classifier is None:
            return list(cands), {}
        result = filter_single_object(cands, record.image, classifier)
        skipped_small += result.skipped_small
        conf = {id(c): f for c, f in zip(result.kept, result.confidences)}
        return list(result.kept), conf

    positives_raw, negatives_raw = propose_candidates(record, detector, config)
    deduped = dedup_negatives(negatives_raw, positives_raw, config.tau_iou)
    pos_kept, pos_conf = run_filter(positives_raw)

    if not pos_kept and config.fallback is FallbackPolicy.STRICT:
        raise ExemplarSelectionError(
            f"{record.image_id}: no positive exemplar under the strict policy "
            f"(candidates at tau_l={config.tau_l}: {len(positives_raw)})"
        )

    if not pos_kept and positives_raw:
        pos_kept = select_top_k(positives_raw, 1)
        pos_conf = {}
        fallback_used.append("relaxed-filter")
    elif not pos_kept:
        relaxed = config.tau_l / 2.0
        fallback_used.append("halved-threshold")
        positives_raw = list(
            detector.detect_record(record, record.class_name, relaxed).boxes
        )
        negatives_raw = list(
            detector.detect_record(record, config.negative_prompt, relaxed).boxes
        )
        deduped = dedup_negatives(negatives_raw, positives_raw, config.tau_iou)
        pos_kept, pos_conf = run_filter(positives_raw)
        if not pos_kept and positives_raw:
            pos_kept = select_top_k(positives_raw, 1)
            pos_conf = {}
            fallback_used.append("relaxed-filter")
        if not pos_kept:
            raise ExemplarSelectionError(
                f"{record.image_id}: no positive candidates even at tau_l={relaxed}"
            )

    pos_selected = select_top_k(pos_kept, config.k)
    neg_kept, neg_conf = run_filter(deduped)
    neg_selected = select_top_k(neg_kept, config.k)

    contrastive_active = True
    if not neg_selected:
        neg_selected = _background_negatives(record, positives_raw, config)
        if neg_selected:
            fallback_used.append("background-negatives")
            neg_conf = {}
        else:
            contrastive_active = False

    def to_exemplars(
        boxes: list[ScoredBox], conf: dict[int, float]
    ) -> tuple[Exemplar, ...]:
        return tuple(
            Exemplar(
                patch=_crop(record.image, sb.box, config.patch_side),
                box=sb.box,
                logit=sb.logit,
                source_prompt=sb.source_prompt,
                classifier_confidence=conf.get(id(sb)),
            )
            for sb in boxes
        )

    return ExemplarPair(
        image_id=record.image_id,
        positives=to_exemplars(pos_selected, pos_conf),
        negatives=to_exemplars(neg_selected, neg_conf),
        contrastive_active=contrastive_active,
        fallback_used=tuple(fallback_used),
        skipped_small=skipped_small,
    )


def mine_exemplars(
    records: Sequence[CountingRecord],
    detector: Detector,
    classifier: Optional[PatchClassifier],
    config: Optional[PipelineConfig] = None,
) -> dict[str, ExemplarPair]:
    """Precompute exemplar pairs for every record, keyed by image id."""
    config = config or PipelineConfig()
    return {
        r.image_id: build_exemplar_pairs(r, detector, classifier, config) for r in records
    }


def save_exemplar_pair(directory: Union[str, Path], pair: ExemplarPair) -> None:
    """One JSON record plus the cropped patches as PNG files."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)

    def dump_stream(tag: str, stream: tuple[Exemplar, ...]) -> list[dict]:
        out = []
        for i, ex in enumerate(stream):
            patch_file = f"{pair.image_id}_{tag}{i}.png"
            save_png(root / patch_file, to_uint8(ex.patch))
            entry = {
                "xyxy": list(ex.box.as_tuple()),
                "logit": ex.logit,
                "patch": patch_file,
            }
            if ex.classifier_confidence is not None:
                entry["classifier_confidence"] = ex.classifier_confidence
            out.append(entry)
        return out

    record = {
        "image": pair.image_id,
        "positives": dump_stream("pos", pair.positives),
        "negatives": dump_stream("neg", pair.negatives),
        "contrastive_active": pair.contrastive_active,
        "fallback_used": list(pair.fallback_used),
        "skipped_small": pair.skipped_small,
    }
    (root / f"{pair.image_id}.json").write_text(json.dumps(record, indent=2, sort_keys=True))


def load_exemplar_pairs(directory: Union[str, Path]) -> dict[str, ExemplarPair]:
    root = Path(directory)
    pairs: dict[str, ExemplarPair] = {}
    for path in sorted(root.glob("*.json")):
        record = json.loads(path.read_text())

        def load_stream(entries: list[dict], prompt: str) -> tuple[Exemplar, ...]:
            out = []
            for e in entries:
                out.append(
                    Exemplar(
                        patch=to_float(load_png(root / e["patch"])),
                        box=Box(*e["xyxy"]),
                        logit=float(e["logit"]),
                        source_prompt=prompt,
                        classifier_confidence=e.get("classifier_confidence"),
                    )
                )
            return tuple(out)

        pairs[record["image"]] = ExemplarPair(
            image_id=record["image"],
            positives=load_stream(record["positives"], ""),
            negatives=load_stream(record["negatives"], ""),
            contrastive_active=bool(record.get("contrastive_active", True)),
            fallback_used=tuple(record.get("fallback_used", [])),
            skipped_small=int(record.get("skipped_small", 0)),
        )
    return pairs
