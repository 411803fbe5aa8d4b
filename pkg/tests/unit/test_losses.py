"""
Loss terms: identities, worked values, switches and gradients.
"""

import math

import numpy as np
import pytest

from conftest import tiny_model_config
from segcrowd.errors import DomainError, ShapeError
from segcrowd.gradcheck import check_gradients
from segcrowd.losses import (
    DICE_EPSILON,
    LossBreakdown,
    LossSwitches,
    LossTargets,
    dice,
    l_cla,
    l_euclidean,
    l_fin,
    l_seg,
    total_loss,
)
from segcrowd.model import build, forward
from segcrowd.tensor import Tensor


class TestEuclidean:
    def test_equal_maps(self, rng):
        grid = rng.random((5, 6))
        assert l_euclidean(grid, grid).item() == 0.0

    @pytest.mark.parametrize("dims", [(1, 1), (4, 4), (7, 3)])
    def test_zero_against_ones(self, dims):
        assert l_euclidean(np.zeros(dims), np.ones(dims)).item() == pytest.approx(0.5)

    def test_non_negative(self, rng):
        for _ in range(10):
            assert l_euclidean(rng.normal(size=(3, 3)), rng.normal(size=(3, 3))).item() >= 0.0

    def test_dims_mismatch(self):
        with pytest.raises(ShapeError):
            l_euclidean(np.zeros((4, 4)), np.zeros((4, 5)))


class TestDice:
    def test_identical_binary(self, rng):
        gt = (rng.random((8, 8)) > 0.5).astype(float)
        assert dice(gt, gt).item() == pytest.approx(1.0, abs=1e-6)

    def test_disjoint(self):
        pred = np.zeros((4, 4))
        gt = np.zeros((4, 4))
        pred[:2] = 1.0
        gt[2:] = 1.0
        expected = DICE_EPSILON / (8.0 + 8.0 + DICE_EPSILON)
        assert dice(pred, gt).item() == pytest.approx(expected, rel=1e-12)

    def test_half_prediction(self):
        assert dice(np.full((10, 10), 0.5), np.ones((10, 10))).item() == pytest.approx(0.8, abs=1e-6)
        assert l_seg(np.full((10, 10), 0.5), np.ones((10, 10))).item() == pytest.approx(0.2, abs=1e-6)

    def test_empty_on_empty_is_perfect(self):
        assert dice(np.zeros((3, 3)), np.zeros((3, 3))).item() == 1.0
        assert l_seg(np.zeros((3, 3)), np.zeros((3, 3))).item() == 0.0

    def test_symmetric_and_bounded(self, rng):
        for _ in range(10):
            a, b = rng.random((6, 6)), (rng.random((6, 6)) > 0.3).astype(float)
            d = dice(a, b).item()
            assert d == pytest.approx(dice(b, a).item(), rel=1e-12)
            assert 0.0 < d <= 1.0
            assert 0.0 <= l_seg(a, b).item() <= 1.0

    def test_ground_truth_out_of_range(self):
        with pytest.raises(DomainError, match=r"\[0, 1\]"):
            dice(np.zeros((2, 2)), np.full((2, 2), 2.0))


class TestClassification:
    def test_confident_correct(self):
        logits = np.array([-1000.0, 1000.0, -1000.0, -1000.0, -1000.0])
        assert l_cla(logits, 2).item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform_logits(self):
        assert l_cla(np.zeros(5), 4).item() == pytest.approx(math.log(5), abs=1e-9)

    def test_batch_mean(self, rng):
        logits = rng.normal(size=(3, 5))
        batch = l_cla(logits, [1, 5, 2]).item()
        single = [l_cla(logits[i], t).item() for i, t in enumerate([1, 5, 2])]
        assert batch == pytest.approx(np.mean(single), rel=1e-12)

    @pytest.mark.parametrize("target", [0, 6, 2.5])
    def test_target_out_of_range(self, target):
        with pytest.raises(DomainError):
            l_cla(np.zeros(5), target)

    @pytest.mark.parametrize("shift", [-40.0, 3.5, 250.0])
    def test_shift_invariant(self, rng, shift):
        logits = rng.normal(size=(3, 5))
        base = l_cla(logits, [1, 4, 5]).item()
        assert l_cla(logits + shift, [1, 4, 5]).item() == pytest.approx(base, rel=1e-9, abs=1e-12)


class TestTotal:
    def test_weighted_sum(self):
        assert l_fin(1.0, 1.0, 1.0, 1.0) == pytest.approx(3.01, abs=1e-12)
        assert l_fin(0.0, 0.0, 0.0, 0.0) == 0.0
        assert l_fin(0.3, 0.2, 0.1, 7.0, lambda1=0.0) == pytest.approx(0.6)

    @pytest.fixture
    def output_and_targets(self, rng):
        params = build(tiny_model_config())
        output = forward(params, rng.random((32, 32)))
        targets = LossTargets(
            density=rng.random((8, 8)) * 0.05,
            segmentation=(rng.random((8, 8)) > 0.6).astype(float),
            class_label=2,
        )
        return output, targets

    def test_identity_holds(self, output_and_targets):
        output, targets = output_and_targets
        loss, parts = total_loss(output, targets, LossSwitches())
        assert parts.l_fin == pytest.approx(parts.l_den + parts.l_int + parts.l_seg + 0.01 * parts.l_cla, abs=1e-12)
        assert loss.item() == parts.l_fin

    def test_cla_task_off(self, output_and_targets):
        output, targets = output_and_targets
        _, parts = total_loss(output, targets, LossSwitches(cla_task=False))
        assert parts.l_cla == 0.0
        assert parts.l_fin == pytest.approx(parts.l_den + parts.l_int + parts.l_seg, abs=1e-12)

    def test_all_auxiliary_tasks_off(self, output_and_targets):
        output, targets = output_and_targets
        _, parts = total_loss(output, targets, LossSwitches(cla_task=False, seg_task=False, intermediate_supervision=False))
        assert parts.l_fin == parts.l_den
        assert parts.l_int == parts.l_seg == 0.0

    def test_breakdown_mean_and_row(self):
        parts = [LossBreakdown(1.0, 2.0, 3.0, 4.0, 10.0), LossBreakdown(3.0, 2.0, 1.0, 0.0, 6.0)]
        mean = LossBreakdown.mean(parts)
        assert mean.row() == [2.0, 2.0, 2.0, 2.0, 8.0]
        assert mean.to_dict()["lambda1"] == 0.01

    def test_lambda1_scales_logit_gradient(self, rng):
        logits = Tensor(rng.normal(size=5), requires_grad=True)
        pred = Tensor(rng.random((4, 4)), requires_grad=True)
        gt = rng.random((4, 4))
        seg_gt = (gt > 0.5).astype(float)

        l_cla(logits, 3).backward()
        alone = logits.grad.copy()

        logits.zero_grad()
        fin = l_fin(l_euclidean(pred, gt), l_euclidean(pred, gt * 0.5), l_seg(pred, seg_gt), l_cla(logits, 3), lambda1=0.01)
        fin.backward()
        np.testing.assert_allclose(logits.grad, 0.01 * alone, rtol=1e-12, atol=1e-15)


class TestLossGradients:
    def test_euclidean_and_dice(self, rng):
        pred = Tensor(rng.random((5, 5)), requires_grad=True)
        gt = (rng.random((5, 5)) > 0.5).astype(float)
        assert check_gradients(lambda: l_euclidean(pred, gt), {"pred": pred}).passed(1e-4)
        assert check_gradients(lambda: l_seg(pred, gt), {"pred": pred}).passed(1e-4)

    def test_cross_entropy(self, rng):
        logits = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
        assert check_gradients(lambda: l_cla(logits, [3, 1]), {"logits": logits}).passed(1e-4)
