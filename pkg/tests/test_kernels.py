"""Compiled extension vs numpy reference: the two backends must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from promptcount import _kernels
from promptcount._kernels import _ref

from _oracles import random_boxes

try:
    from promptcount._kernels import _core
except ImportError:
    _core = None

needs_core = pytest.mark.skipif(_core is None, reason="compiled extension not built")


def test_backend_reports_a_known_name():
    assert _kernels.BACKEND in ("cython", "numpy")


@needs_core
def test_pairwise_iou_bit_identical_across_backends(rng):
    for trial in range(50):
        a = random_boxes(rng, int(rng.integers(1, 40)))
        b = random_boxes(rng, int(rng.integers(1, 40)))
        ref = _ref.pairwise_iou(a, b)
        core = np.asarray(_core.pairwise_iou(a, b))
        assert ref.shape == core.shape
        assert np.array_equal(ref, core), f"trial {trial}: backends disagree"


@needs_core
def test_pairwise_iou_identical_on_touching_and_nested_boxes():
    a = np.array(
        [[0.0, 0.0, 2.0, 2.0], [2.0, 0.0, 4.0, 2.0], [0.5, 0.5, 1.5, 1.5]]
    )
    ref = _ref.pairwise_iou(a, a)
    core = np.asarray(_core.pairwise_iou(a, a))
    assert np.array_equal(ref, core)


@needs_core
def test_dedup_keep_bit_identical_across_backends(rng):
    for _ in range(50):
        neg = random_boxes(rng, int(rng.integers(0, 30)))
        pos = random_boxes(rng, int(rng.integers(0, 10)))
        tau = float(rng.uniform(0.05, 0.95))
        ref = _ref.dedup_keep(neg, pos, tau)
        core = np.asarray(_core.dedup_keep(neg, pos, tau))
        assert np.array_equal(ref, core)


@needs_core
def test_dedup_keep_identical_at_exact_tau_tie():
    # IoU of these two boxes is exactly 1/3; a tie at tau must drop the box
    # identically on both backends.
    neg = np.array([[0.0, 0.0, 2.0, 1.0]])
    pos = np.array([[1.0, 0.0, 3.0, 1.0]])
    tau = 1.0 / 3.0
    assert np.array_equal(
        _ref.dedup_keep(neg, pos, tau), np.asarray(_core.dedup_keep(neg, pos, tau))
    )


@needs_core
def test_gaussian_splat_matches_reference_closely(rng):
    for _ in range(20):
        n = int(rng.integers(0, 30))
        pts = np.stack(
            [rng.uniform(0, 64, size=n), rng.uniform(0, 48, size=n)], axis=1
        )
        sigma = float(rng.uniform(0.5, 6.0))
        ref = _ref.gaussian_splat(pts, 48, 64, sigma, 4.0, 1.0)
        core = np.asarray(_core.gaussian_splat(pts, 48, 64, sigma, 4.0, 1.0))
        np.testing.assert_allclose(core, ref, rtol=1e-12, atol=1e-14)


def test_env_var_forces_pure_python_backend():
    code = (
        "from promptcount import _kernels; print(_kernels.BACKEND)"
    )
    env = dict(os.environ, PROMPTCOUNT_PURE_PY="1")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "numpy"


def test_ref_dedup_keeps_everything_without_positives(rng):
    neg = random_boxes(rng, 7)
    keep = _ref.dedup_keep(neg, np.empty((0, 4)), 0.5)
    assert keep.tolist() == [1] * 7


def test_ref_splat_empty_points_is_zero_grid():
    grid = _ref.gaussian_splat(np.empty((0, 2)), 8, 8, 2.0, 4.0, 1.0)
    assert grid.shape == (8, 8)
    assert grid.sum() == 0.0
