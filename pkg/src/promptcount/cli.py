"""Command-line surface: dataset generation through training, eval, sweeps.

Every command accepts --config pointing at a JSON file whose keys mirror the
option names (underscored); explicit flags win over file values. Errors from
the library surface as clean one-line messages with exit code 1.
"""

from __future__ import annotations

import functools
import json
from pathlib import Path
from typing import Optional

import click

from .counter import CounterConfig, load_checkpoint, save_checkpoint
from .data import (
    SyntheticSpec,
    load_annotated_dataset,
    load_dataset,
    save_dataset,
    split_by_class,
    split_by_class_names,
    synthesize_dataset,
)
from .density import load_density, save_density
from .detector import NoiseSpec, make_detector
from .errors import PromptCountError
from .exemplars import (
    PipelineConfig,
    load_exemplar_pairs,
    mine_exemplars,
    save_exemplar_pair,
)
from .geometry import Box
from .images import load_png
from .patchfilter import (
    DeskFeaturizer,
    FilterConfig,
    PatchClassifier,
    build_training_set,
    save_filter_head,
    train_filter,
)
from .render import render_overlay_file
from .training import (
    TrainConfig,
    detect_count_evaluate,
    evaluate_metrics,
    sweep as run_sweep,
    train_counter,
)

_DETECTOR_HELP = "synthetic | external:<endpoint>"


def _wrap_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PromptCountError as exc:
            raise click.ClickException(str(exc))

    return wrapper


def _ensure_parent(path) -> str:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return str(path)


def _merge_config(config_path: Optional[str], **flags) -> dict:
    merged: dict = {}
    if config_path:
        merged.update(json.loads(Path(config_path).read_text()))
    for key, value in flags.items():
        if value is not None:
            merged[key] = value
    return merged


def _load_records(dataset, annotations, class_map, images):
    if annotations:
        if not (class_map and images):
            raise click.ClickException(
                "--annotations requires --class-map and --images"
            )
        return load_annotated_dataset(annotations, class_map, images)
    if not dataset:
        raise click.ClickException("provide --dataset or --annotations")
    return load_dataset(dataset)


def _noise_from_json(noise: Optional[str]) -> Optional[NoiseSpec]:
    if not noise:
        return None
    return NoiseSpec.from_dict(json.loads(noise))


def _split_records(records, train_classes, val_classes, test_classes, split_seed):
    if train_classes or val_classes or test_classes:
        if not (train_classes and val_classes and test_classes):
            raise click.ClickException(
                "give all three of --train-classes/--val-classes/--test-classes"
            )
        return split_by_class_names(
            records,
            train_classes.split(","),
            val_classes.split(","),
            test_classes.split(","),
        )
    return split_by_class(records, seed=split_seed or 0)


@click.group()
@click.version_option(package_name="promptcount")
def main() -> None:
    """Prompt-conditioned object counting at desk scale."""


@main.command("make-synthetic")
@click.option("--spec", "spec_path", type=click.Path(exists=True), help="Spec JSON file.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@_wrap_errors
def make_synthetic(spec_path: Optional[str], seed: int, out_dir: str) -> None:
    """Generate a seeded synthetic dataset (images + annotations + scenes)."""
    spec = (
        SyntheticSpec.from_dict(json.loads(Path(spec_path).read_text()))
        if spec_path
        else SyntheticSpec()
    )
    records = synthesize_dataset(spec, seed=seed)
    save_dataset(out_dir, records)
    counts = [r.count for r in records]
    click.echo(
        f"wrote {len(records)} images over {len(spec.classes)} classes to {out_dir} "
        f"(counts {min(counts)}..{max(counts)})"
    )


@main.command("train-filter")
@click.option("--dataset", type=click.Path(exists=True))
@click.option("--annotations", type=click.Path(exists=True))
@click.option("--class-map", type=click.Path(exists=True))
@click.option("--images", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--epochs", type=int)
@click.option("--lr", type=float)
@click.option("--batch-size", type=int)
@click.option("--seed", type=int)
@_wrap_errors
def train_filter_cmd(dataset, annotations, class_map, images, out_path,
                     config_path, epochs, lr, batch_size, seed) -> None:
    """Train the single-object patch filter and save its head."""
    opts = _merge_config(
        config_path, epochs=epochs, lr=lr, batch_size=batch_size, seed=seed
    )
    records = _load_records(dataset, annotations, class_map, images)
    cfg = FilterConfig(
        epochs=int(opts.get("epochs", 300)),
        lr=float(opts.get("lr", 1e-2)),
        batch_size=int(opts.get("batch_size", 32)),
        seed=int(opts.get("seed", 0)),
    )
    backbone = DeskFeaturizer()
    data = build_training_set(records, rng_seed=cfg.seed, patch_side=backbone.input_side)
    head, report = train_filter(data, backbone, cfg)
    save_filter_head(out_path, head, backbone)
    click.echo(
        f"trained on {report.train_size} patches, "
        f"held-out accuracy {report.eval_accuracy:.3f} "
        f"({report.eval_size} eval patches); head -> {out_path}"
    )


@main.command("select-exemplars")
@click.option("--dataset", type=click.Path(exists=True))
@click.option("--annotations", type=click.Path(exists=True))
@click.option("--class-map", type=click.Path(exists=True))
@click.option("--images", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--detector", "detector_spec", default="synthetic", show_default=True,
              help=_DETECTOR_HELP)
@click.option("--noise", help="Synthetic detector noise as inline JSON.")
@click.option("--filter-head", type=click.Path(exists=True))
@click.option("--no-filter", is_flag=True, default=False)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--tau-l", type=float)
@click.option("--tau-iou", type=float)
@click.option("--k", type=int)
@click.option("--patch-side", type=int)
@click.option("--seed", type=int)
@_wrap_errors
def select_exemplars(dataset, annotations, class_map, images, out_dir, detector_spec,
                     noise, filter_head, no_filter, config_path, tau_l, tau_iou,
                     k, patch_side, seed) -> None:
    """Mine positive/negative exemplars per image and cache them."""
    opts = _merge_config(
        config_path, tau_l=tau_l, tau_iou=tau_iou, k=k, patch_side=patch_side, seed=seed
    )
    records = _load_records(dataset, annotations, class_map, images)
    pipeline = PipelineConfig(
        tau_l=float(opts.get("tau_l", 0.02)),
        tau_iou=float(opts.get("tau_iou", 0.5)),
        k=int(opts.get("k", 3)),
        patch_side=int(opts.get("patch_side", 64)),
        seed=int(opts.get("seed", 0)),
    )
    classifier = None
    if not no_filter:
        if not filter_head:
            raise click.ClickException("provide --filter-head or pass --no-filter")
        classifier = PatchClassifier.from_file(filter_head)
    with make_detector(detector_spec, records, _noise_from_json(noise)) as detector:
        pairs = mine_exemplars(records, detector, classifier, pipeline)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for pair in pairs.values():
        save_exemplar_pair(out, pair)
    n_fallback = sum(1 for p in pairs.values() if p.fallback_used)
    click.echo(
        f"mined exemplars for {len(pairs)} images -> {out_dir} "
        f"({n_fallback} used a fallback)"
    )


def _train_options(fn):
    for opt in reversed([
        click.option("--config", "config_path", type=click.Path(exists=True)),
        click.option("--epochs", type=int),
        click.option("--lr", type=float),
        click.option("--batch-size", type=int),
        click.option("--seed", type=int),
        click.option("--weight-decay", type=float),
        click.option("--loss", "loss_mode", type=click.Choice(["ld", "ld+lc"])),
        click.option("--tau-l", type=float),
        click.option("--tau-iou", type=float),
        click.option("--k", type=int),
        click.option("--sigma", type=float),
        click.option("--scale", "density_scale", type=float),
        click.option("--train-classes"),
        click.option("--val-classes"),
        click.option("--test-classes"),
        click.option("--split-seed", type=int),
    ]):
        fn = opt(fn)
    return fn


def _train_config_from(opts: dict) -> TrainConfig:
    return TrainConfig(
        lr=float(opts.get("lr", 1e-5)),
        batch_size=int(opts.get("batch_size", 8)),
        epochs=int(opts.get("epochs", 20)),
        seed=int(opts.get("seed", 0)),
        weight_decay=float(opts.get("weight_decay", 1e-2)),
        loss_mode=str(opts.get("loss_mode", "ld+lc")),
        tau_l=float(opts.get("tau_l", 0.02)),
        tau_iou=float(opts.get("tau_iou", 0.5)),
        k=int(opts.get("k", 3)),
        sigma=float(opts.get("sigma", 4.0)),
        density_scale=float(opts.get("density_scale", 1.0)),
    )


@main.command("train-counter")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--exemplars", "exemplar_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--log", "log_path", type=click.Path())
@click.option("--embed-dim", type=int)
@click.option("--patch-size", type=int)
@_train_options
@_wrap_errors
def train_counter_cmd(dataset, exemplar_dir, out_path, log_path, embed_dim, patch_size,
                      config_path, train_classes, val_classes, test_classes,
                      split_seed, **flags) -> None:
    """Train the counter on cached exemplars and save a checkpoint."""
    opts = _merge_config(config_path, **flags)
    records = load_dataset(dataset)
    split = _split_records(records, train_classes, val_classes, test_classes, split_seed)
    pairs = load_exemplar_pairs(exemplar_dir)
    config = _train_config_from(opts)
    h = records[0].image.shape[0]
    counter_config = CounterConfig(
        image_size=h,
        patch_size=int(patch_size if patch_size is not None else opts.get("patch_size", 16)),
        embed_dim=int(embed_dim if embed_dim is not None else opts.get("embed_dim", 64)),
        density_scale=config.density_scale,
    )
    model, history = train_counter(split, pairs, config, counter_config, log_path=log_path)
    save_checkpoint(out_path, model)
    last = history[-1] if history else {}
    click.echo(
        f"trained {config.epochs} epochs; final l_total={last.get('l_total', float('nan')):.4f}"
        + (f", val MAE={last['val_mae']:.3f}" if "val_mae" in last else "")
        + f"; checkpoint -> {out_path}"
    )


@main.command("evaluate")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--split", "split_part", type=click.Choice(["train", "val", "test"]),
              default="test", show_default=True)
@click.option("--mode", type=click.Choice(["counter", "detect-count"]),
              default="counter", show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True))
@click.option("--exemplars", "exemplar_dir", type=click.Path(exists=True))
@click.option("--detector", "detector_spec", default="synthetic", show_default=True,
              help=_DETECTOR_HELP)
@click.option("--noise", help="Synthetic detector noise as inline JSON.")
@click.option("--filter-head", type=click.Path(exists=True))
@click.option("--tau-l", type=float, default=0.02, show_default=True)
@click.option("--train-classes")
@click.option("--val-classes")
@click.option("--test-classes")
@click.option("--split-seed", type=int)
@click.option("--json", "json_out", type=click.Path())
@click.option("--density-out", "density_dir", type=click.Path(),
              help="Directory for per-image predicted density files (counter mode).")
@_wrap_errors
def evaluate_cmd(dataset, split_part, mode, checkpoint, exemplar_dir, detector_spec,
                 noise, filter_head, tau_l, train_classes, val_classes, test_classes,
                 split_seed, json_out, density_dir) -> None:
    """Report MAE/RMSE for the counter or the detector-count baseline."""
    records = load_dataset(dataset)
    split = _split_records(records, train_classes, val_classes, test_classes, split_seed)
    part = split.parts[split_part]
    if mode == "counter":
        if not (checkpoint and exemplar_dir):
            raise click.ClickException("counter mode needs --checkpoint and --exemplars")
        model = load_checkpoint(checkpoint)
        pairs = load_exemplar_pairs(exemplar_dir)
        report = evaluate_metrics(part, model, pairs, split_id=split_part)
        if density_dir:
            out = Path(density_dir)
            out.mkdir(parents=True, exist_ok=True)
            for record in part:
                pair = pairs[record.image_id]
                density = model.predict(record.image, [ex.patch for ex in pair.positives])
                save_density(out / f"{record.image_id}.dmap", density)
            click.echo(f"wrote {len(part)} density files -> {out}")
    else:
        if density_dir:
            raise click.ClickException("--density-out requires --mode counter")
        classifier = PatchClassifier.from_file(filter_head) if filter_head else None
        with make_detector(detector_spec, records, _noise_from_json(noise)) as det:
            report = detect_count_evaluate(
                part, det, tau_l=tau_l, classifier=classifier, split_id=split_part
            )
    click.echo(
        f"{split_part}: MAE={report.mae:.3f} RMSE={report.rmse:.3f} "
        f"({len(report.per_image)} images, config {report.config_hash})"
    )
    if json_out:
        Path(json_out).write_text(json.dumps(report.to_dict(), indent=2))


@main.command("sweep")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--param", required=True, type=click.Choice(["tau_iou", "tau_l"]))
@click.option("--values", required=True,
              help="Comma-separated threshold values, e.g. 0.1,0.2,0.3")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--detector", "detector_spec", default="synthetic", show_default=True,
              help=_DETECTOR_HELP)
@click.option("--noise", help="Synthetic detector noise as inline JSON.")
@click.option("--filter-head", type=click.Path(exists=True))
@click.option("--no-filter", is_flag=True, default=False)
@_train_options
@_wrap_errors
def sweep_cmd(dataset, param, values, out_dir, detector_spec, noise, filter_head,
              no_filter, config_path, train_classes, val_classes, test_classes,
              split_seed, **flags) -> None:
    """Train/evaluate across threshold values; write CSV and text tables."""
    opts = _merge_config(config_path, **flags)
    records = load_dataset(dataset)
    split = _split_records(records, train_classes, val_classes, test_classes, split_seed)
    classifier = None
    if not no_filter:
        if not filter_head:
            raise click.ClickException("provide --filter-head or pass --no-filter")
        classifier = PatchClassifier.from_file(filter_head)
    value_list = [float(v) for v in values.split(",") if v.strip()]
    with make_detector(detector_spec, records, _noise_from_json(noise)) as detector:
        table = run_sweep(
            param,
            value_list,
            split,
            detector,
            classifier,
            train_config=_train_config_from(opts),
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / f"sweep_{param}.csv")
    (out / f"sweep_{param}.txt").write_text(table.to_text() + "\n")
    click.echo(table.to_text())


@main.command("render")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--density", "density_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--boxes", "boxes_json",
              help='Boxes as inline JSON: [[x0,y0,x1,y1], ...]')
@_wrap_errors
def render_cmd(image_path, density_path, out_path, boxes_json) -> None:
    """Blend a density file over its image and write the overlay PNG."""
    image = load_png(image_path)
    density = load_density(density_path)
    boxes = [Box(*b) for b in json.loads(boxes_json)] if boxes_json else None
    render_overlay_file(out_path, image, density, boxes)
    click.echo(f"overlay -> {out_path}")


if __name__ == "__main__":
    main()
