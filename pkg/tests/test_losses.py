"""Loss terms against closed forms, hand oracles, and autograd gradient checks."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from promptcount import (
    DensityMap,
    batch_total_loss,
    contrastive_loss,
    density_loss,
    similarity,
    total_loss,
)
from promptcount.errors import ShapeMismatchError


def random_map(rng, shape=(8, 8)):
    return rng.uniform(0.0, 2.0, size=shape)


class TestSimilarity:
    def test_matches_cosine_oracle(self, rng):
        for _ in range(50):
            a = random_map(rng)
            b = random_map(rng)
            expected = float(
                np.dot(a.ravel(), b.ravel())
                / (np.linalg.norm(a.ravel()) * np.linalg.norm(b.ravel()))
            )
            assert float(similarity(a, b)) == pytest.approx(expected, abs=1e-12)

    def test_identical_maps_score_one(self, rng):
        a = random_map(rng)
        assert float(similarity(a, a)) == pytest.approx(1.0, abs=1e-12)

    def test_zero_map_scores_zero(self, rng):
        a = random_map(rng)
        assert float(similarity(np.zeros_like(a), a)) == 0.0
        assert float(similarity(np.zeros_like(a), np.zeros_like(a))) == 0.0

    def test_accepts_density_map_wrapper(self, rng):
        grid = rng.uniform(0.0, 1.0, size=(6, 6)).astype(np.float32)
        wrapped = DensityMap(grid=grid, scale=1.0)
        assert float(similarity(wrapped, grid)) == pytest.approx(1.0, abs=1e-6)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            similarity(np.zeros((4, 4)), np.zeros((5, 5)))


class TestContrastiveClosedForms:
    def test_balanced_similarities_give_ln2(self, rng):
        # sim_pos == sim_neg == 1 when both predictions equal ground truth.
        a = random_map(rng)
        loss = float(contrastive_loss(a, a, a.copy()))
        assert abs(loss - math.log(2.0)) < 1e-9

    def test_orthogonal_negative_gives_softplus_of_minus_one(self):
        # d_pos == d_gt makes sim_pos = 1; a negative living in disjoint
        # pixels is orthogonal, so sim_neg = 0 and the loss is softplus(-1).
        d_gt = np.zeros((4, 4))
        d_gt[0, 0] = 1.0
        d_neg = np.zeros((4, 4))
        d_neg[3, 3] = 1.0
        loss = float(contrastive_loss(d_gt.copy(), d_gt, d_neg))
        assert loss == pytest.approx(0.31326168751822286, abs=1e-6)

    def test_anticorrelated_negative_gives_softplus_of_minus_two(self):
        # A negative equal to -d_gt has sim_neg = -1, so the loss is
        # softplus(-2).
        d_gt = np.ones((4, 4))
        loss = float(contrastive_loss(d_gt.copy(), d_gt, -d_gt))
        assert loss == pytest.approx(0.12692801104297263, abs=1e-6)

    def test_missing_negative_contributes_zero(self, rng):
        assert float(contrastive_loss(random_map(rng), random_map(rng), None)) == 0.0

    def test_better_positive_alignment_lowers_loss(self, rng):
        d_gt = random_map(rng)
        d_neg = random_map(rng)
        aligned = float(contrastive_loss(d_gt.copy(), d_gt, d_neg))
        noisy = float(contrastive_loss(d_gt + rng.uniform(1, 2, d_gt.shape), d_gt, d_neg))
        assert aligned <= noisy


class TestDensityLoss:
    def test_matches_mse_oracle(self, rng):
        a = random_map(rng)
        b = random_map(rng)
        expected = float(np.mean((a - b) ** 2))
        assert float(density_loss(a, b)) == pytest.approx(expected, abs=1e-12)

    def test_zero_at_equality(self, rng):
        a = random_map(rng)
        assert float(density_loss(a, a.copy())) == 0.0

    @given(shift=st.floats(min_value=-3.0, max_value=3.0, allow_nan=False))
    @settings(max_examples=50, deadline=None)
    def test_uniform_shift_squares(self, shift):
        a = np.ones((5, 5))
        assert float(density_loss(a + shift, a)) == pytest.approx(shift**2, abs=1e-9)


class TestTotalLoss:
    def test_total_is_sum_of_terms(self, rng):
        p, g, n = random_map(rng), random_map(rng), random_map(rng)
        out = total_loss(p, g, n)
        assert float(out.total) == pytest.approx(
            float(out.l_c) + float(out.l_d), abs=1e-12
        )
        assert out.contrastive_active

    def test_no_negative_disables_contrastive(self, rng):
        out = total_loss(random_map(rng), random_map(rng), None)
        assert not out.contrastive_active
        assert float(out.l_c) == 0.0
        assert float(out.total) == float(out.l_d)

    def test_report_mirrors_tensor_values(self, rng):
        out = total_loss(random_map(rng), random_map(rng), random_map(rng))
        rep = out.report()
        assert rep.l_total == float(out.total)
        assert rep.sim_pos == float(out.sim_pos)
        assert set(rep.to_dict()) == {
            "l_c",
            "l_d",
            "l_total",
            "sim_pos",
            "sim_neg",
            "contrastive_active",
        }

    def test_gradients_flow_and_match_gradcheck(self, rng):
        p = torch.tensor(random_map(rng, (5, 5)), requires_grad=True)
        n = torch.tensor(random_map(rng, (5, 5)), requires_grad=True)
        g = torch.tensor(random_map(rng, (5, 5)))

        def f(dp, dn):
            return total_loss(dp, g, dn).total

        assert torch.autograd.gradcheck(f, (p, n), eps=1e-6, atol=1e-8)


class TestBatchTotalLoss:
    def test_mean_matches_manual_loop(self, rng):
        pos = [random_map(rng) for _ in range(4)]
        gt = [random_map(rng) for _ in range(4)]
        neg = [random_map(rng), None, random_map(rng), None]
        mean, outputs = batch_total_loss(pos, gt, neg)
        manual = np.mean([float(total_loss(p, g, n).total) for p, g, n in zip(pos, gt, neg)])
        assert float(mean) == pytest.approx(manual, abs=1e-12)
        assert len(outputs) == 4
        assert [o.contrastive_active for o in outputs] == [True, False, True, False]

    def test_misaligned_batches_rejected(self, rng):
        with pytest.raises(ShapeMismatchError):
            batch_total_loss([random_map(rng)], [random_map(rng)], [])

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            batch_total_loss([], [], [])
