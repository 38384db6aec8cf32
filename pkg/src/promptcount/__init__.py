"""Prompt-conditioned object counting: mine exemplars from a text-driven
detector, then regress a density map whose sum is the count."""

from ._kernels import BACKEND
from .counter import (
    CounterConfig,
    CounterModel,
    load_checkpoint,
    patches_to_tensor,
    save_checkpoint,
)
from .data import (
    CountingRecord,
    DatasetSplit,
    SyntheticSpec,
    load_annotated_dataset,
    load_dataset,
    save_dataset,
    split_by_class,
    split_by_class_names,
    synthesize_dataset,
)
from .density import (
    DensityMap,
    count_from_density,
    generate_density_map,
    load_density,
    read_density,
    save_density,
    write_density,
)
from .detector import (
    GENERIC_PROMPT,
    DetectionRequest,
    DetectionResponse,
    Detector,
    ExternalDetector,
    NoiseSpec,
    SyntheticDetector,
    make_detector,
    parse_external_response,
    synthetic_detect,
)
from .errors import (
    ConfigurationError,
    ExemplarSelectionError,
    FormatError,
    GenerationError,
    GeometryError,
    PromptCountError,
    ProtocolError,
    ShapeMismatchError,
    TrainingError,
    TransportError,
    UsageError,
)
from .exemplars import (
    Exemplar,
    ExemplarPair,
    FallbackPolicy,
    PipelineConfig,
    build_exemplar_pairs,
    load_exemplar_pairs,
    mine_exemplars,
    save_exemplar_pair,
)
from .geometry import Box, ScoredBox, boxes_array, dedup_negatives, iou, pairwise_iou
from .losses import (
    LossOutput,
    LossReport,
    batch_total_loss,
    contrastive_loss,
    density_loss,
    similarity,
    total_loss,
)
from .patchfilter import (
    DeskFeaturizer,
    EmbeddingBackbone,
    FilterConfig,
    FilterHead,
    LabeledPatchSet,
    PatchClassifier,
    build_training_set,
    load_filter_head,
    save_filter_head,
    train_filter,
)
from .render import colorize_density, render_overlay, render_overlay_file
from .scenes import SHAPE_CLASSES, SyntheticScene, generate_scene, render_scene
from .serialization import (
    canonical_json,
    config_hash,
    load_archive,
    read_archive,
    save_archive,
    write_archive,
)
from .training import (
    EvalReport,
    SweepRow,
    SweepTable,
    TrainConfig,
    constant_mean_baseline,
    detect_count_evaluate,
    evaluate_metrics,
    sweep,
    train_counter,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Box",
    "ConfigurationError",
    "CounterConfig",
    "CounterModel",
    "CountingRecord",
    "DatasetSplit",
    "DensityMap",
    "DeskFeaturizer",
    "DetectionRequest",
    "DetectionResponse",
    "Detector",
    "EmbeddingBackbone",
    "EvalReport",
    "Exemplar",
    "ExemplarPair",
    "ExemplarSelectionError",
    "ExternalDetector",
    "FallbackPolicy",
    "FilterConfig",
    "FilterHead",
    "FormatError",
    "GENERIC_PROMPT",
    "GenerationError",
    "GeometryError",
    "LabeledPatchSet",
    "LossOutput",
    "LossReport",
    "NoiseSpec",
    "PatchClassifier",
    "PipelineConfig",
    "PromptCountError",
    "ProtocolError",
    "SHAPE_CLASSES",
    "ScoredBox",
    "ShapeMismatchError",
    "SweepRow",
    "SweepTable",
    "SyntheticDetector",
    "SyntheticScene",
    "SyntheticSpec",
    "TrainConfig",
    "TrainingError",
    "TransportError",
    "UsageError",
    "batch_total_loss",
    "boxes_array",
    "build_exemplar_pairs",
    "build_training_set",
    "canonical_json",
    "colorize_density",
    "config_hash",
    "constant_mean_baseline",
    "contrastive_loss",
    "count_from_density",
    "dedup_negatives",
    "density_loss",
    "detect_count_evaluate",
    "evaluate_metrics",
    "generate_density_map",
    "generate_scene",
    "iou",
    "load_annotated_dataset",
    "load_archive",
    "load_checkpoint",
    "load_dataset",
    "load_density",
    "load_exemplar_pairs",
    "load_filter_head",
    "make_detector",
    "mine_exemplars",
    "pairwise_iou",
    "parse_external_response",
    "patches_to_tensor",
    "read_archive",
    "read_density",
    "render_overlay",
    "render_overlay_file",
    "render_scene",
    "save_archive",
    "save_checkpoint",
    "save_dataset",
    "save_density",
    "save_exemplar_pair",
    "save_filter_head",
    "similarity",
    "split_by_class",
    "split_by_class_names",
    "sweep",
    "synthesize_dataset",
    "synthetic_detect",
    "total_loss",
    "train_counter",
    "train_filter",
    "write_archive",
    "write_density",
]
