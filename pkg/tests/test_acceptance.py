"""Acceptance gate: one check per shipping criterion, one PASS/FAIL line each.

Every test prints `ACCEPTANCE <n>: PASS/FAIL - <detail>` on the live terminal
(bypassing capture) so the verdicts are visible in any pytest run. Heavy
artifacts (datasets, classifiers, trained counters) are built once in cached
helpers and shared between criteria that use the same recipe.
"""

import functools
import math
import struct
import time

import numpy as np
import pytest
import torch

from promptcount import (
    Box,
    CounterConfig,
    CounterModel,
    DensityMap,
    DeskFeaturizer,
    FilterConfig,
    LabeledPatchSet,
    NoiseSpec,
    PatchClassifier,
    PipelineConfig,
    ScoredBox,
    SyntheticDetector,
    SyntheticSpec,
    TrainConfig,
    build_training_set,
    constant_mean_baseline,
    contrastive_loss,
    dedup_negatives,
    detect_count_evaluate,
    evaluate_metrics,
    generate_density_map,
    load_checkpoint,
    mine_exemplars,
    read_density,
    save_checkpoint,
    split_by_class_names,
    sweep,
    synthesize_dataset,
    total_loss,
    train_counter,
    train_filter,
    write_density,
)
from promptcount.detector import synthetic_detect
from promptcount.errors import FormatError
from promptcount.scenes import SHAPE_CLASSES, generate_scene

from _oracles import iou_scalar, random_boxes


def _announce(capsys, number: int, compute):
    """Run one criterion, print its verdict on the terminal, then assert it."""
    try:
        ok, detail = compute()
    except BaseException as exc:
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: FAIL - raised {type(exc).__name__}: {exc}")
        raise
    with capsys.disabled():
        print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"acceptance criterion {number} failed: {detail}"


# --- shared recipes -----------------------------------------------------------


def _fit_classifier(records) -> PatchClassifier:
    data = build_training_set(records, rng_seed=0, patch_side=32)
    backbone = DeskFeaturizer()
    head, _ = train_filter(data, backbone, FilterConfig())
    return PatchClassifier(backbone, head)


@functools.lru_cache(maxsize=None)
def _desk_bundle():
    """Three-class dataset with a clean detector and a tuned 20-epoch counter."""
    spec = SyntheticSpec(
        classes=("circle", "square", "triangle"),
        images_per_class=(30, 10, 10),
        count_min=3,
        count_max=12,
    )
    records = synthesize_dataset(spec, seed=7)
    split = split_by_class_names(records, ["circle"], ["square"], ["triangle"])
    classifier = _fit_classifier(records)
    detector = SyntheticDetector.for_records(records)
    pairs = mine_exemplars(records, detector, classifier, PipelineConfig(patch_side=16))
    start = time.perf_counter()
    model, history = train_counter(
        split,
        pairs,
        TrainConfig(
            epochs=20,
            lr=5e-4,
            batch_size=1,
            sigma=4.0,
            density_scale=70.0,
            loss_mode="ld",
            seed=0,
            weight_decay=1e-3,
        ),
        CounterConfig(
            image_size=64,
            patch_size=8,
            embed_dim=64,
            heads=1,
            exemplar_patch=4,
            density_scale=70.0,
        ),
    )
    train_seconds = time.perf_counter() - start
    return {
        "records": records,
        "split": split,
        "classifier": classifier,
        "pairs": pairs,
        "model": model,
        "history": history,
        "train_seconds": train_seconds,
    }


_DISTRACTOR_SPEC = SyntheticSpec(
    classes=SHAPE_CLASSES,
    images_per_class=8,
    count_min=3,
    count_max=6,
    distractor_rate=1.0,
)
_DISTRACTOR_NOISE = NoiseSpec(jitter=0.5, merge_rate=0.0, spurious=0, logit_noise=0.05)


@functools.lru_cache(maxsize=None)
def _distractor_prep(seed: int):
    """Distractor-heavy six-class dataset plus its mined exemplars."""
    records = synthesize_dataset(_DISTRACTOR_SPEC, seed=seed)
    split = split_by_class_names(
        records, ["square", "triangle", "diamond", "cross"], ["circle"], ["ring"]
    )
    classifier = _fit_classifier(records)
    detector = SyntheticDetector.for_records(records, _DISTRACTOR_NOISE)
    pairs = mine_exemplars(records, detector, classifier, PipelineConfig(patch_side=16))
    return split, pairs


@functools.lru_cache(maxsize=None)
def _distractor_test_mae(seed: int, loss_mode: str) -> float:
    split, pairs = _distractor_prep(seed)
    model, _ = train_counter(
        split,
        pairs,
        TrainConfig(
            epochs=40,
            lr=3e-4,
            batch_size=1,
            sigma=3.0,
            density_scale=400.0,
            loss_mode=loss_mode,
            seed=seed,
            weight_decay=1e-3,
            checkpoint_policy="best-val",
        ),
        CounterConfig(
            image_size=64,
            patch_size=8,
            embed_dim=64,
            exemplar_patch=4,
            density_scale=400.0,
        ),
    )
    return evaluate_metrics(split.test, model, pairs).mae


# --- criteria -----------------------------------------------------------------


def test_criterion_01_dedup_matches_bruteforce_oracle(capsys):
    def compute():
        rng = np.random.default_rng(20260815)
        dedup_seconds = 0.0
        mismatches = 0
        for _ in range(1000):
            n_neg = int(rng.integers(0, 51))
            n_pos = int(rng.integers(0, 21))
            negatives = [
                ScoredBox(box=Box(*b), logit=float(rng.uniform(0, 1)))
                for b in random_boxes(rng, n_neg)
            ]
            positives = [
                ScoredBox(box=Box(*b), logit=float(rng.uniform(0, 1)))
                for b in random_boxes(rng, n_pos)
            ]
            tau = float(rng.uniform(0.05, 1.0))
            t0 = time.perf_counter()
            kept = dedup_negatives(negatives, positives, tau)
            dedup_seconds += time.perf_counter() - t0
            expected = [
                n
                for n in negatives
                if all(iou_scalar(n.box.as_tuple(), p.box.as_tuple()) < tau
                       for p in positives)
            ]
            if [id(k) for k in kept] != [id(e) for e in expected]:
                mismatches += 1
        ok = mismatches == 0 and dedup_seconds < 10.0
        return ok, (
            f"1000 random instances match the all-pairs oracle exactly "
            f"({mismatches} mismatches), dedup time {dedup_seconds:.2f}s (< 10s)"
        )

    _announce(capsys, 1, compute)


def test_criterion_02_contrastive_fixed_points(capsys):
    def compute():
        rng = np.random.default_rng(2)
        grid = rng.uniform(0.1, 1.0, size=(8, 8))

        # Equal similarities: both predictions equal ground truth.
        balanced = float(contrastive_loss(grid, grid, grid.copy()))
        err_ln2 = abs(balanced - math.log(2.0))

        # Perfect positive with an orthogonal negative: softplus(-1).
        gt = np.zeros((4, 4))
        gt[0, 0] = 1.0
        orth = np.zeros((4, 4))
        orth[3, 3] = 1.0
        v1 = float(contrastive_loss(gt.copy(), gt, orth))
        err_1 = abs(v1 - 0.313262)

        # Perfect positive with an anticorrelated negative: softplus(-2).
        ones = np.ones((4, 4))
        v2 = float(contrastive_loss(ones.copy(), ones, -ones))
        err_2 = abs(v2 - 0.126928)

        ok = err_ln2 < 1e-9 and err_1 < 1e-6 and err_2 < 1e-6
        return ok, (
            f"ln2 err {err_ln2:.2e} (<1e-9); "
            f"0.313262 err {err_1:.2e}, 0.126928 err {err_2:.2e} (<1e-6)"
        )

    _announce(capsys, 2, compute)


def _np_total_loss(dp: np.ndarray, gt: np.ndarray, dn: np.ndarray) -> float:
    """Independent scalar mirror of the training objective for finite differences."""

    def sim(a, b):
        denom = max(np.linalg.norm(a) * np.linalg.norm(b), 1e-8)
        return float(a.ravel() @ b.ravel()) / denom

    l_c = float(np.logaddexp(0.0, sim(dn, gt) - sim(dp, gt)))
    l_d = float(np.mean((dp - gt) ** 2))
    return l_c + l_d


def _max_rel_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    scale = max(float(np.abs(analytic).max()), float(np.abs(fd).max()), 1e-12)
    return float(np.abs(analytic - fd).max()) / scale


def test_criterion_03_gradients_match_finite_differences(capsys):
    def compute():
        rng = np.random.default_rng(3)
        h_step = 1e-6
        worst_maps = 0.0
        for _ in range(100):
            dp = rng.uniform(0.05, 2.0, size=(8, 8))
            dn = rng.uniform(0.05, 2.0, size=(8, 8))
            gt = rng.uniform(0.05, 2.0, size=(8, 8))

            tp = torch.tensor(dp, requires_grad=True)
            tn = torch.tensor(dn, requires_grad=True)
            out = total_loss(tp, torch.tensor(gt), tn)
            assert abs(float(out.total.detach()) - _np_total_loss(dp, gt, dn)) < 1e-12
            out.total.backward()

            for arr, grad in ((dp, tp.grad.numpy()), (dn, tn.grad.numpy())):
                fd = np.zeros_like(arr)
                flat = arr.ravel()
                fd_flat = fd.ravel()
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + h_step
                    hi = _np_total_loss(dp, gt, dn)
                    flat[i] = orig - h_step
                    lo = _np_total_loss(dp, gt, dn)
                    flat[i] = orig
                    fd_flat[i] = (hi - lo) / (2.0 * h_step)
                worst_maps = max(worst_maps, _max_rel_error(grad, fd))

        # End to end: double-precision 16x16 counter, gradients through the
        # full objective checked on sampled input and parameter components.
        torch.manual_seed(0)
        model = CounterModel(
            CounterConfig(
                image_size=16,
                patch_size=4,
                embed_dim=16,
                exemplar_embed_dim=16,
                exemplar_patch=4,
                density_scale=5.0,
            )
        ).double()
        gen = torch.Generator().manual_seed(1)
        image = torch.rand((3, 16, 16), generator=gen, dtype=torch.float64)
        pos = torch.rand((2, 3, 8, 8), generator=gen, dtype=torch.float64)
        neg = torch.rand((1, 3, 8, 8), generator=gen, dtype=torch.float64)
        gt16 = torch.rand((16, 16), generator=gen, dtype=torch.float64)
        image.requires_grad_(True)
        pos.requires_grad_(True)
        neg.requires_grad_(True)

        def forward() -> torch.Tensor:
            return total_loss(model(image, pos), gt16, model(image, neg)).total

        loss = forward()
        params = [model.patch_embed.weight, model.key_proj.weight, model.density_head.bias]
        grads = torch.autograd.grad(loss, [image, pos, neg] + params)

        sample_rng = np.random.default_rng(4)
        h16 = 1e-5
        worst_model = 0.0
        for tensor, grad in zip([image, pos, neg] + params, grads):
            flat = tensor.detach().reshape(-1)
            gflat = grad.reshape(-1)
            n_samples = min(12, flat.numel())
            idx = sample_rng.choice(flat.numel(), size=n_samples, replace=False)
            fd_vals = np.zeros(n_samples)
            an_vals = gflat[torch.from_numpy(idx)].numpy()
            for j, i in enumerate(idx):
                i = int(i)
                with torch.no_grad():
                    orig = float(flat[i])
                    flat[i] = orig + h16
                    hi = float(forward())
                    flat[i] = orig - h16
                    lo = float(forward())
                    flat[i] = orig
                fd_vals[j] = (hi - lo) / (2.0 * h16)
            scale = max(float(np.abs(gflat.numpy()).max()), 1e-12)
            worst_model = max(worst_model, float(np.abs(an_vals - fd_vals).max()) / scale)

        ok = worst_maps <= 1e-6 and worst_model <= 1e-4
        return ok, (
            f"loss maps: max rel err {worst_maps:.2e} over 100 trials (<=1e-6); "
            f"16x16 counter end to end: {worst_model:.2e} (<=1e-4)"
        )

    _announce(capsys, 3, compute)


def test_criterion_04_density_mass_counts_points(capsys):
    def compute():
        rng = np.random.default_rng(44)
        worst = 0.0
        violations = 0
        for trial in range(500):
            h = int(rng.integers(24, 97))
            w = int(rng.integers(24, 97))
            n = int(rng.integers(1, 61))
            pts = np.column_stack(
                [rng.uniform(0, w, size=n), rng.uniform(0, h, size=n)]
            )
            if trial % 3 == 0:
                # Pin some points onto the borders and corners.
                pts[0] = (0.0, 0.0)
                if n > 1:
                    pts[1] = (w - 1e-3, h - 1e-3)
                if n > 2:
                    pts[2] = (0.0, h - 1e-3)
            sigma = float(rng.uniform(0.5, 5.0))
            scale = 1.0 if trial % 2 == 0 else float(rng.uniform(0.5, 80.0))
            density = generate_density_map(pts, h, w, sigma=sigma, scale=scale)
            err = abs(density.count() - n)
            worst = max(worst, err)
            if err > 1e-3 * n + 1e-6:
                violations += 1
        ok = violations == 0
        return ok, (
            f"500 random point sets (border points included): worst count error "
            f"{worst:.2e}, {violations} outside 1e-3*n+1e-6"
        )

    _announce(capsys, 4, compute)


def test_criterion_05_threshold_monotonicity(capsys):
    def compute():
        rng = np.random.default_rng(55)

        # Raising the logit threshold must shrink detector output to a subset.
        logit_violations = 0
        noise = NoiseSpec(logit_noise=0.15, spurious=2)
        for i in range(500):
            scene = generate_scene(
                class_name=str(rng.choice(SHAPE_CLASSES)),
                n_objects=int(rng.integers(1, 8)),
                width=64,
                height=64,
                seed=int(rng.integers(0, 2**31)),
                distractor_rate=float(rng.uniform(0, 1)),
            )
            lo, hi = np.sort(rng.uniform(0.0, 1.0, size=2))
            prompt = scene.class_name if i % 2 == 0 else "object"
            at_lo = synthetic_detect(scene, prompt, noise, float(lo)).boxes
            at_hi = synthetic_detect(scene, prompt, noise, float(hi)).boxes
            keys_lo = [(b.box.as_tuple(), b.logit) for b in at_lo]
            keys_hi = [(b.box.as_tuple(), b.logit) for b in at_hi]
            if not set(keys_hi) <= set(keys_lo):
                logit_violations += 1
            # Survivors keep their relative order.
            positions = [keys_lo.index(k) for k in keys_hi]
            if positions != sorted(positions):
                logit_violations += 1

        # Raising the overlap threshold must never evict a kept negative.
        iou_violations = 0
        for _ in range(500):
            negatives = [
                ScoredBox(box=Box(*b), logit=float(rng.uniform(0, 1)))
                for b in random_boxes(rng, int(rng.integers(1, 40)))
            ]
            positives = [
                ScoredBox(box=Box(*b), logit=float(rng.uniform(0, 1)))
                for b in random_boxes(rng, int(rng.integers(0, 15)))
            ]
            lo, hi = np.sort(rng.uniform(0.05, 1.0, size=2))
            kept_lo = {id(b) for b in dedup_negatives(negatives, positives, float(lo))}
            kept_hi = {id(b) for b in dedup_negatives(negatives, positives, float(hi))}
            if not kept_lo <= kept_hi:
                iou_violations += 1

        ok = logit_violations == 0 and iou_violations == 0
        return ok, (
            f"500 scenes: higher logit threshold always a subset "
            f"({logit_violations} violations); 500 candidate sets: higher overlap "
            f"threshold never drops a kept negative ({iou_violations} violations)"
        )

    _announce(capsys, 5, compute)


def test_criterion_06_single_object_filter_accuracy(capsys):
    def compute():
        spec = SyntheticSpec(
            classes=SHAPE_CLASSES,
            images_per_class=17,
            count_min=3,
            count_max=6,
        )
        records = synthesize_dataset(spec, seed=21)
        data = build_training_set(records, rng_seed=0, patch_side=32)
        n_single = int((data.labels == 1).sum())
        n_multi = int((data.labels == 0).sum())

        backbone = DeskFeaturizer()
        _, report = train_filter(data, backbone, FilterConfig())

        shuffled = LabeledPatchSet(
            patches=data.patches,
            labels=np.random.default_rng(0).permutation(data.labels),
            is_train=data.is_train,
            source_class=data.source_class,
            skipped_records=data.skipped_records,
        )
        _, control = train_filter(shuffled, backbone, FilterConfig())

        ok = (
            n_single >= 300
            and n_multi >= 300
            and report.eval_accuracy >= 0.90
            and 0.4 <= control.eval_accuracy <= 0.6
        )
        return ok, (
            f"{n_single} singles / {n_multi} multis (>=300 each), held-out accuracy "
            f"{report.eval_accuracy:.3f} (>=0.90), shuffled-label control "
            f"{control.eval_accuracy:.3f} (in [0.4, 0.6])"
        )

    _announce(capsys, 6, compute)


def test_criterion_07_counter_beats_constant_baseline(capsys):
    def compute():
        start = time.perf_counter()
        bundle = _desk_bundle()
        elapsed = time.perf_counter() - start
        split = bundle["split"]
        mae = evaluate_metrics(split.test, bundle["model"], bundle["pairs"]).mae
        baseline = constant_mean_baseline(split.train, split.test)
        ok = (
            len(bundle["history"]) == 20
            and mae <= 0.5 * baseline
            and bundle["train_seconds"] <= 15 * 60
        )
        return ok, (
            f"unseen-class test MAE {mae:.3f} vs constant-mean baseline "
            f"{baseline:.3f} (need <= {0.5 * baseline:.3f}); 20 epochs in "
            f"{bundle['train_seconds']:.0f}s (<900s), bundle total {elapsed:.0f}s"
        )

    _announce(capsys, 7, compute)


def test_criterion_08_contrastive_term_helps_under_distractors(capsys):
    def compute():
        seeds = range(5)
        with_both = [_distractor_test_mae(s, "ld+lc") for s in seeds]
        density_only = [_distractor_test_mae(s, "ld") for s in seeds]
        med_both = float(np.median(with_both))
        med_density = float(np.median(density_only))
        ok = med_both <= med_density
        pairs_txt = ", ".join(
            f"seed {s}: {d:.2f}/{b:.2f}" for s, d, b in zip(seeds, density_only, with_both)
        )
        return ok, (
            f"distractor-heavy median test MAE: density+contrastive {med_both:.3f} "
            f"<= density-only {med_density:.3f} (per seed ld/ld+lc: {pairs_txt})"
        )

    _announce(capsys, 8, compute)


def test_criterion_09_counting_degrades_gracefully_under_noise(capsys):
    def compute():
        bundle = _desk_bundle()
        records = bundle["records"]
        split = bundle["split"]
        classifier = bundle["classifier"]
        noisy = SyntheticDetector.for_records(
            records, NoiseSpec(merge_rate=0.3, spurious=6)
        )
        raw = detect_count_evaluate(split.test, noisy).mae
        filtered = detect_count_evaluate(split.test, noisy, classifier=classifier).mae
        pairs = mine_exemplars(records, noisy, classifier, PipelineConfig(patch_side=16))
        model, _ = train_counter(
            split,
            pairs,
            TrainConfig(
                epochs=20,
                lr=5e-4,
                batch_size=1,
                sigma=4.0,
                density_scale=70.0,
                loss_mode="ld",
                seed=0,
                weight_decay=1e-3,
            ),
            CounterConfig(
                image_size=64,
                patch_size=8,
                embed_dim=64,
                heads=1,
                exemplar_patch=4,
                density_scale=70.0,
            ),
        )
        counter_mae = evaluate_metrics(split.test, model, pairs).mae
        ok = raw > filtered > counter_mae
        return ok, (
            f"with merges and spurious boxes: detect-count {raw:.3f} > filtered "
            f"detect-count {filtered:.3f} > trained counter {counter_mae:.3f}"
        )

    _announce(capsys, 9, compute)


def test_criterion_10_sweep_emits_threshold_tables(capsys, tmp_path):
    def compute():
        records = synthesize_dataset(_DISTRACTOR_SPEC, seed=0)
        split = split_by_class_names(
            records, ["square", "triangle", "diamond", "cross"], ["circle"], ["ring"]
        )
        classifier = _fit_classifier(records)
        detector = SyntheticDetector.for_records(
            records, NoiseSpec(jitter=0.5, merge_rate=0.0, spurious=2, logit_noise=0.05)
        )
        train_cfg = TrainConfig(
            epochs=20,
            lr=3e-4,
            batch_size=1,
            sigma=3.0,
            density_scale=400.0,
            loss_mode="ld+lc",
            seed=0,
            weight_decay=1e-3,
            checkpoint_policy="best-val",
        )
        counter_cfg = CounterConfig(
            image_size=64,
            patch_size=8,
            embed_dim=64,
            exemplar_patch=4,
            density_scale=400.0,
        )
        start = time.perf_counter()
        iou_table = sweep(
            "tau_iou",
            [round(0.1 * i, 1) for i in range(1, 10)],
            split,
            detector,
            classifier,
            train_cfg,
            counter_cfg,
            patch_side=16,
            out_dir=tmp_path,
        )
        logit_table = sweep(
            "tau_l",
            [round(0.01 * i, 2) for i in range(1, 6)],
            split,
            detector,
            classifier,
            train_cfg,
            counter_cfg,
            patch_side=16,
            out_dir=tmp_path,
        )
        elapsed = time.perf_counter() - start

        problems = []
        for table, n_rows in ((iou_table, 9), (logit_table, 5)):
            if len(table.rows) != n_rows:
                problems.append(f"{table.param}: {len(table.rows)} rows, wanted {n_rows}")
            for row in table.rows:
                if not math.isclose(row.avg_mae, 0.5 * (row.val_mae + row.test_mae)):
                    problems.append(f"{table.param}: avg column wrong at {row.value}")
            best = min(range(len(table.rows)), key=lambda i: (table.rows[i].avg_mae, i))
            if table.best_index != best:
                problems.append(f"{table.param}: best row not highlighted")
            text = table.to_text()
            if text.count("*") != 1 or f"best {table.param}" not in text:
                problems.append(f"{table.param}: text table missing the best marker")
            csv_path = tmp_path / f"sweep_{table.param}.csv"
            lines = csv_path.read_text().splitlines()
            if len(lines) != n_rows + 1 or not lines[0].startswith(table.param):
                problems.append(f"{table.param}: CSV malformed")
        if elapsed > 45 * 60:
            problems.append(f"took {elapsed:.0f}s")

        ok = not problems
        best_iou = iou_table.rows[iou_table.best_index].value
        best_l = logit_table.rows[logit_table.best_index].value
        return ok, (
            f"9-row overlap table (best {best_iou:g}) and 5-row logit table "
            f"(best {best_l:g}) with averages and highlighted best in {elapsed:.0f}s "
            f"(<2700s)" + ("" if ok else f"; problems: {problems}")
        )

    _announce(capsys, 10, compute)


def test_criterion_11_round_trips_and_corruption_rejection(capsys, tmp_path):
    def compute():
        rng = np.random.default_rng(11)
        problems = []

        # Density file: write -> read -> write must be byte identical.
        for _ in range(20):
            grid = rng.uniform(0, 3, size=rng.integers(2, 40, size=2)).astype(np.float32)
            blob = write_density(DensityMap(grid=grid, scale=float(rng.uniform(0.5, 9))))
            again = write_density(read_density(blob))
            if blob != again:
                problems.append("density round trip changed bytes")
                break

        density_blob = write_density(
            DensityMap(grid=rng.uniform(0, 1, size=(6, 5)).astype(np.float32), scale=2.0)
        )
        corrupt_density = [
            (b"XMAP" + density_blob[4:], "magic"),
            (density_blob[:4] + b"\x09" + density_blob[5:], "version"),
            (density_blob[:-3], "truncation"),
            (density_blob + b"\x00", "trailing bytes"),
        ]
        nan_blob = bytearray(density_blob)
        struct.pack_into("<f", nan_blob, 17, float("nan"))
        corrupt_density.append((bytes(nan_blob), "non-finite value"))
        for blob, label in corrupt_density:
            try:
                read_density(blob)
                problems.append(f"density {label} accepted")
            except FormatError as exc:
                if exc.offset is None or "offset" not in str(exc):
                    problems.append(f"density {label} error lacks a location")

        # Checkpoint: write -> read -> write must be byte identical.
        torch.manual_seed(0)
        model = CounterModel(
            CounterConfig(image_size=16, patch_size=4, embed_dim=16, exemplar_patch=4)
        )
        first = tmp_path / "a.pcta"
        second = tmp_path / "b.pcta"
        save_checkpoint(first, model)
        save_checkpoint(second, load_checkpoint(first))
        blob = first.read_bytes()
        if blob != second.read_bytes():
            problems.append("checkpoint round trip changed bytes")

        corrupt_archive = [
            (b"XXXX" + blob[4:], "magic"),
            (blob[:4] + b"\x07" + blob[5:], "version"),
            (blob[: len(blob) // 2], "truncation"),
            (blob + b"\x00\x00", "trailing bytes"),
            (blob.replace(b"{", b"[", 1), "metadata json"),
        ]
        for payload, label in corrupt_archive:
            bad = tmp_path / "bad.pcta"
            bad.write_bytes(payload)
            try:
                load_checkpoint(bad)
                problems.append(f"checkpoint {label} accepted")
            except FormatError as exc:
                if exc.offset is None or "offset" not in str(exc):
                    problems.append(f"checkpoint {label} error lacks a location")

        ok = not problems
        return ok, (
            "density and checkpoint files re-serialize byte for byte; "
            "10 corruption modes rejected with byte offsets"
            + ("" if ok else f"; problems: {problems}")
        )

    _announce(capsys, 11, compute)
