"""Counter training, MAE/RMSE evaluation, baselines, and threshold sweeps.

One optimizer step consumes a batch of images; each image contributes a
positive forward pass, an optional negative forward pass, and the combined
loss, averaged over the batch. Exemplar pairs are supplied by a mapping from
image id (precomputed by the mining pipeline), so epochs never re-run the
detector.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import torch

from .counter import CounterConfig, CounterModel
from .data import CountingRecord, DatasetSplit
from .density import count_from_density, generate_density_map
from .detector import Detector
from .errors import ConfigurationError, TrainingError
from .exemplars import (
    ExemplarPair,
    PipelineConfig,
    filter_single_object,
    mine_exemplars,
)
from .losses import total_loss
from .patchfilter import PatchClassifier
from .serialization import config_hash

__all__ = [
    "TrainConfig",
    "EvalReport",
    "train_counter",
    "evaluate_metrics",
    "detect_count_evaluate",
    "constant_mean_baseline",
    "SweepRow",
    "SweepTable",
    "sweep",
]

LOSS_MODES = ("ld", "ld+lc")

CHECKPOINT_POLICIES = ("final", "best-val")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 8
    epochs: int = 20
    seed: int = 0
    weight_decay: float = 1e-2
    loss_mode: str = "ld+lc"
    tau_l: float = 0.02
    tau_iou: float = 0.5
    k: int = 3
    sigma: float = 4.0
    density_scale: float = 1.0
    # "best-val" keeps the epoch with the lowest validation MAE instead of
    # the last one; it requires a nonempty validation split.
    checkpoint_policy: str = "final"

    def __post_init__(self) -> None:
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigurationError("lr and weight_decay must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigurationError(
                f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}"
            )
        if self.checkpoint_policy not in CHECKPOINT_POLICIES:
            raise ConfigurationError(
                f"checkpoint_policy must be one of {CHECKPOINT_POLICIES}, "
                f"got {self.checkpoint_policy!r}"
            )
        if self.sigma <= 0 or self.density_scale <= 0:
            raise ConfigurationError("sigma and density_scale must be positive")

    def pipeline_config(self, patch_side: int = 64, seed: int = 0) -> PipelineConfig:
        return PipelineConfig(
            tau_l=self.tau_l,
            tau_iou=self.tau_iou,
            k=self.k,
            patch_side=patch_side,
            seed=seed,
        )

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "weight_decay": self.weight_decay,
            "loss_mode": self.loss_mode,
            "tau_l": self.tau_l,
            "tau_iou": self.tau_iou,
            "k": self.k,
            "sigma": self.sigma,
            "density_scale": self.density_scale,
            "checkpoint_policy": self.checkpoint_policy,
        }


@dataclass(frozen=True)
class EvalReport:
    per_image: tuple[tuple[str, float, float], ...]
    mae: float
    rmse: float
    split_id: str
    config_hash: str

    def __post_init__(self) -> None:
        if self.rmse < self.mae - 1e-9:
            raise ValueError(f"rmse {self.rmse} < mae {self.mae}")

    def to_dict(self) -> dict:
        return {
            "split": self.split_id,
            "mae": self.mae,
            "rmse": self.rmse,
            "config_hash": self.config_hash,
            "per_image": [
                {"image": i, "gt": g, "pred": p} for i, g, p in self.per_image
            ],
        }


def _metrics(errors: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(errors, dtype=np.float64)
    return float(np.abs(arr).mean()), float(np.sqrt((arr**2).mean()))


def _build_report(
    rows: list[tuple[str, float, float]], split_id: str, cfg_hash: str
) -> EvalReport:
    mae, rmse = _metrics([g - p for _, g, p in rows])
    return EvalReport(
        per_image=tuple(rows), mae=mae, rmse=rmse, split_id=split_id, config_hash=cfg_hash
    )


def evaluate_metrics(
    records: Sequence[CountingRecord],
    model: CounterModel,
    exemplar_source: Mapping[str, ExemplarPair],
    split_id: str = "test",
) -> EvalReport:
    """Counter MAE/RMSE over a split part; only positive exemplars are used."""
    if not records:
        raise ConfigurationError(f"cannot evaluate an empty split ({split_id!r})")
    rows = []
    for record in records:
        pair = exemplar_source.get(record.image_id)
        if pair is None:
            raise ConfigurationError(f"no exemplar pair for image {record.image_id!r}")
        density = model.predict(record.image, [ex.patch for ex in pair.positives])
        rows.append((record.image_id, float(record.count), count_from_density(density)))
    cfg_hash = config_hash({"mode": "counter", "counter": model.config.to_dict()})
    return _build_report(rows, split_id, cfg_hash)


def detect_count_evaluate(
    records: Sequence[CountingRecord],
    detector: Detector,
    tau_l: float = 0.02,
    classifier: Optional[PatchClassifier] = None,
    split_id: str = "test",
) -> EvalReport:
    """Detector-only baseline: count = number of class-prompt boxes.

    With a classifier, boxes are first reduced to single-object survivors.
    """
    if not records:
        raise ConfigurationError(f"cannot evaluate an empty split ({split_id!r})")
    rows = []
    for record in records:
        boxes = list(detector.detect_record(record, record.class_name, tau_l).boxes)
        if classifier is not None:
            boxes = list(filter_single_object(boxes, record.image, classifier).kept)
        rows.append((record.image_id, float(record.count), float(len(boxes))))
    cfg_hash = config_hash(
        {"mode": "detect-count", "tau_l": tau_l, "filtered": classifier is not None}
    )
    return _build_report(rows, split_id, cfg_hash)


def constant_mean_baseline(
    train_records: Sequence[CountingRecord], eval_records: Sequence[CountingRecord]
) -> float:
    """MAE of always predicting the training-split mean count."""
    if not train_records or not eval_records:
        raise ConfigurationError("baseline needs nonempty train and eval parts")
    mean_count = float(np.mean([r.count for r in train_records]))
    return float(np.mean([abs(r.count - mean_count) for r in eval_records]))


def _prepare_example(
    record: CountingRecord,
    pair: ExemplarPair,
    config: TrainConfig,
    use_negatives: bool,
) -> dict:
    h, w = record.image.shape[:2]
    gt = generate_density_map(
        record.points, h, w, sigma=config.sigma, scale=config.density_scale
    )
    image = torch.from_numpy(
        (record.image.astype(np.float32) / 255.0).transpose(2, 0, 1).copy()
    )
    pos = [ex.patch for ex in pair.positives]
    neg = [ex.patch for ex in pair.negatives]
    pos_t = torch.from_numpy(
        np.stack(pos).transpose(0, 3, 1, 2).copy()
    ) if pos else torch.zeros((0, 3, 1, 1))
    neg_t = None
    if use_negatives and pair.contrastive_active and neg:
        neg_t = torch.from_numpy(np.stack(neg).transpose(0, 3, 1, 2).copy())
    return {
        "id": record.image_id,
        "image": image,
        "gt": torch.from_numpy(gt.grid.astype(np.float32)),
        "pos": pos_t,
        "neg": neg_t,
    }


def train_counter(
    split: DatasetSplit,
    exemplar_source: Mapping[str, ExemplarPair],
    config: Optional[TrainConfig] = None,
    counter_config: Optional[CounterConfig] = None,
    log_path: Optional[Union[str, Path]] = None,
    model: Optional[CounterModel] = None,
) -> tuple[CounterModel, list[dict]]:
    """Train on split.train; returns the model and one history entry per epoch.

    Pass `model` to continue training an existing counter (its config wins);
    otherwise a fresh one is built. A non-finite loss aborts immediately,
    naming the offending image and the loss components, instead of letting
    the run drift.
    """
    config = config or TrainConfig()
    if not split.train:
        raise ConfigurationError("training split is empty")
    h, w = split.train[0].image.shape[:2]
    if h != w:
        raise ConfigurationError(f"counter expects square images, got {w}x{h}")
    if model is not None:
        counter_config = model.config
    elif counter_config is None:
        counter_config = CounterConfig(image_size=h, density_scale=config.density_scale)
    if counter_config.image_size != h:
        raise ConfigurationError(
            f"counter image_size {counter_config.image_size} does not match data {h}"
        )

    track_best = config.checkpoint_policy == "best-val"
    if track_best and not split.val:
        raise ConfigurationError(
            "checkpoint_policy 'best-val' needs a nonempty validation split"
        )

    use_negatives = config.loss_mode == "ld+lc"
    examples = []
    for record in split.train:
        pair = exemplar_source.get(record.image_id)
        if pair is None:
            raise ConfigurationError(f"no exemplar pair for image {record.image_id!r}")
        examples.append(_prepare_example(record, pair, config, use_negatives))

    torch.manual_seed(config.seed)
    if model is None:
        model = CounterModel(counter_config)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.lr, weight_decay=config.weight_decay
    )
    shuffle_rng = np.random.default_rng(config.seed)
    history: list[dict] = []
    best_state: Optional[dict] = None
    best_val = float("inf")
    log_file = open(log_path, "w") if log_path else None
    try:
        for epoch in range(config.epochs):
            model.train()
            order = shuffle_rng.permutation(len(examples))
            sums = {"l_c": 0.0, "l_d": 0.0, "l_total": 0.0}
            for start in range(0, len(order), config.batch_size):
                batch = [examples[i] for i in order[start : start + config.batch_size]]
                optimizer.zero_grad()
                totals = []
                for ex in batch:
                    d_pos = model(ex["image"], ex["pos"])
                    d_neg = model(ex["image"], ex["neg"]) if ex["neg"] is not None else None
                    out = total_loss(d_pos, ex["gt"], d_neg)
                    if not bool(torch.isfinite(out.total)):
                        raise TrainingError(
                            f"non-finite loss at epoch {epoch} on image {ex['id']!r}: "
                            f"l_c={float(out.l_c):g}, l_d={float(out.l_d):g}"
                        )
                    totals.append(out.total)
                    rep = out.report()
                    sums["l_c"] += rep.l_c
                    sums["l_d"] += rep.l_d
                    sums["l_total"] += rep.l_total
                torch.stack(totals).mean().backward()
                optimizer.step()
            n = len(examples)
            entry = {
                "epoch": epoch,
                "l_c": sums["l_c"] / n,
                "l_d": sums["l_d"] / n,
                "l_total": sums["l_total"] / n,
            }
            if split.val:
                entry["val_mae"] = evaluate_metrics(
                    split.val, model, exemplar_source, split_id="val"
                ).mae
                if track_best and entry["val_mae"] < best_val:
                    best_val = entry["val_mae"]
                    best_state = {
                        k: v.detach().clone() for k, v in model.state_dict().items()
                    }
            history.append(entry)
            if log_file:
                log_file.write(json.dumps(entry) + "\n")
                log_file.flush()
    finally:
        if log_file:
            log_file.close()
    if track_best and best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return model, history


@dataclass(frozen=True)
class SweepRow:
    value: float
    val_mae: float
    val_rmse: float
    test_mae: float
    test_rmse: float

    @property
    def avg_mae(self) -> float:
        return 0.5 * (self.val_mae + self.test_mae)

    @property
    def avg_rmse(self) -> float:
        return 0.5 * (self.val_rmse + self.test_rmse)


@dataclass(frozen=True)
class SweepTable:
    param: str
    rows: tuple[SweepRow, ...]
    best_index: int
    config_hash: str

    def to_text(self) -> str:
        header = (
            f"{self.param:>10}  {'val MAE':>8} {'val RMSE':>9} "
            f"{'test MAE':>9} {'test RMSE':>10} {'avg MAE':>8} {'avg RMSE':>9}"
        )
        lines = [header, "-" * len(header)]
        for i, row in enumerate(self.rows):
            mark = "*" if i == self.best_index else " "
            lines.append(
                f"{mark}{row.value:>9.4g}  {row.val_mae:>8.3f} {row.val_rmse:>9.3f} "
                f"{row.test_mae:>9.3f} {row.test_rmse:>10.3f} "
                f"{row.avg_mae:>8.3f} {row.avg_rmse:>9.3f}"
            )
        lines.append(f"best {self.param} = {self.rows[self.best_index].value:g} "
                     f"(config {self.config_hash})")
        return "\n".join(lines)

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [self.param, "val_mae", "val_rmse", "test_mae", "test_rmse",
                 "avg_mae", "avg_rmse", "best"]
            )
            for i, row in enumerate(self.rows):
                writer.writerow(
                    [row.value, row.val_mae, row.val_rmse, row.test_mae,
                     row.test_rmse, row.avg_mae, row.avg_rmse,
                     1 if i == self.best_index else 0]
                )


def sweep(
    param: str,
    values: Sequence[float],
    split: DatasetSplit,
    detector: Detector,
    classifier: Optional[PatchClassifier],
    train_config: Optional[TrainConfig] = None,
    counter_config: Optional[CounterConfig] = None,
    patch_side: int = 64,
    out_dir: Optional[Union[str, Path]] = None,
) -> SweepTable:
    """Train and evaluate once per threshold value; emit a table with averages.

    The swept parameter feeds the exemplar pipeline, so exemplars are re-mined
    for every value with everything else held fixed.
    """
    if param not in ("tau_iou", "tau_l"):
        raise ConfigurationError(f"sweep param must be tau_iou or tau_l, got {param!r}")
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    train_config = train_config or TrainConfig()
    rows = []
    all_records = list(split.train) + list(split.val) + list(split.test)
    for value in values:
        cfg = replace(train_config, **{param: float(value)})
        pipeline = cfg.pipeline_config(patch_side=patch_side, seed=cfg.seed)
        pairs = mine_exemplars(all_records, detector, classifier, pipeline)
        model, _ = train_counter(split, pairs, cfg, counter_config)
        val_report = evaluate_metrics(split.val, model, pairs, split_id="val")
        test_report = evaluate_metrics(split.test, model, pairs, split_id="test")
        rows.append(
            SweepRow(
                value=float(value),
                val_mae=val_report.mae,
                val_rmse=val_report.rmse,
                test_mae=test_report.mae,
                test_rmse=test_report.rmse,
            )
        )
    best = min(range(len(rows)), key=lambda i: (rows[i].avg_mae, i))
    table = SweepTable(
        param=param,
        rows=tuple(rows),
        best_index=best,
        config_hash=config_hash(
            {"param": param, "values": [float(v) for v in values],
             "train": train_config.to_dict()}
        ),
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table.write_csv(out / f"sweep_{param}.csv")
        (out / f"sweep_{param}.txt").write_text(table.to_text() + "\n")
    return table
