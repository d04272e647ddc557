import itertools

import numpy as np
import pytest
import torch

from egoflow.errors import ShapeMismatch
from egoflow.policy import (
    LossWeights,
    aux_losses,
    fm_interpolate,
    fm_loss,
    hungarian,
    ot_pair_assignment,
    region_attention_weight,
    total_loss,
)
from egoflow.policy.losses import GRASP_DIMS, POS_DIMS, ROT_DIMS

W = LossWeights()


def rand_chunks(rng, b=4):
    return (
        torch.from_numpy(rng.normal(size=(b, 50, 20)).astype(np.float32)),
        torch.from_numpy(rng.normal(size=(b, 50, 20)).astype(np.float32)),
    )


class TestInterpolate:
    def test_endpoints(self):
        rng = np.random.default_rng(0)
        x0, x1 = rand_chunks(rng)
        assert torch.equal(fm_interpolate(x0, x1, torch.zeros(4)), x0)
        assert torch.equal(fm_interpolate(x0, x1, torch.ones(4)), x1)

    def test_midpoint(self):
        rng = np.random.default_rng(1)
        x0, x1 = rand_chunks(rng)
        mid = fm_interpolate(x0, x1, torch.full((4,), 0.5))
        assert torch.allclose(mid, 0.5 * (x0 + x1))

    def test_equal_endpoints(self):
        rng = np.random.default_rng(2)
        x0, _ = rand_chunks(rng)
        for t in (0.0, 0.3, 1.0):
            assert torch.allclose(fm_interpolate(x0, x0, torch.full((4,), t)), x0)


class TestFmLoss:
    def test_zero_at_true_velocity(self):
        rng = np.random.default_rng(3)
        x0, x1 = rand_chunks(rng)
        loss, comps = fm_loss(x1 - x0, x0, x1, W)
        assert float(loss) == 0.0
        assert all(float(v) == 0.0 for v in comps.values())

    def test_unit_position_error_equals_wp(self):
        rng = np.random.default_rng(4)
        x0, x1 = rand_chunks(rng)
        v = x1 - x0
        v[:, :, list(POS_DIMS)] += 1.0
        loss, comps = fm_loss(v, x0, x1, W)
        assert float(loss) == pytest.approx(W.w_p)
        assert float(comps["fm_pos"]) == pytest.approx(1.0)

    def test_zero_weights(self):
        rng = np.random.default_rng(5)
        x0, x1 = rand_chunks(rng)
        w0 = LossWeights(w_p=0.0, w_r=0.0, w_g=0.0)
        loss, _ = fm_loss(torch.zeros_like(x0), x0, x1, w0)
        assert float(loss) == 0.0

    def test_shape_mismatch(self):
        rng = np.random.default_rng(6)
        x0, x1 = rand_chunks(rng)
        with pytest.raises(ShapeMismatch):
            fm_loss(x0[:, :10], x0, x1, W)

    def test_group_partition(self):
        assert sorted(POS_DIMS + ROT_DIMS + GRASP_DIMS) == list(range(20))


class TestAuxLosses:
    def _batch(self, rng, b=3):
        preds = {
            "om": torch.from_numpy(rng.normal(size=(b, 50, 9)).astype(np.float32)),
            "trace2d": torch.rand(b, 50, 3, 2),
            "lc": torch.from_numpy(rng.normal(size=(b, 2, 29)).astype(np.float32)),
        }
        targets = {
            "om": preds["om"].clone(),
            "om_mask": torch.ones(b),
            "trace2d": preds["trace2d"].clone(),
            "trace2d_mask": torch.ones(b, 3),
            "lc": preds["lc"].clone(),
            "lc_mask": torch.ones(b, 2),
        }
        return preds, targets

    def test_perfect_predictions(self):
        rng = np.random.default_rng(7)
        preds, targets = self._batch(rng)
        l_om, l_2d, l_lc = aux_losses(preds, targets, W)
        assert float(l_om) == 0.0 and float(l_2d) == 0.0 and float(l_lc) == 0.0

    def test_lc_mask_counts_present_only(self):
        rng = np.random.default_rng(8)
        preds, targets = self._batch(rng, b=2)
        preds["lc"] = targets["lc"] + 1.0  # unit error everywhere
        targets["lc_mask"] = torch.tensor([[1.0, 0.0], [1.0, 0.0]])
        _, _, l_lc = aux_losses(preds, targets, W)
        # masked mean of squared unit error = 1, times w_c
        assert float(l_lc) == pytest.approx(W.w_c)

    def test_om_closed_form(self):
        # 1 cm uniform position error on normalized channels -> 0.5 w_p e^2.
        rng = np.random.default_rng(9)
        preds, targets = self._batch(rng, b=2)
        err = 0.25  # normalized units
        preds["om"] = targets["om"].clone()
        preds["om"][..., :3] += err
        l_om, _, _ = aux_losses(preds, targets, W)
        assert float(l_om) == pytest.approx(0.5 * W.w_p * err**2, rel=1e-5)

    def test_om_mask_zeroes_absent(self):
        rng = np.random.default_rng(10)
        preds, targets = self._batch(rng, b=2)
        preds["om"] = targets["om"] + 5.0
        targets["om_mask"] = torch.zeros(2)
        l_om, _, _ = aux_losses(preds, targets, W)
        assert float(l_om) == 0.0


class TestTotalLoss:
    def test_lambda_zero(self):
        fm = torch.tensor(2.0)
        aux = (torch.tensor(1.0), torch.tensor(1.0), torch.tensor(1.0))
        w0 = LossWeights(lambda_om=0.0, lambda_2d=0.0, lambda_lc=0.0)
        assert float(total_loss(fm, aux, w0)) == 2.0

    def test_all_ones(self):
        fm = torch.tensor(1.0)
        aux = (torch.tensor(1.0), torch.tensor(1.0), torch.tensor(1.0))
        w1 = LossWeights(lambda_om=1.0, lambda_2d=1.0, lambda_lc=1.0)
        assert float(total_loss(fm, aux, w1)) == 4.0

    def test_affine_in_lambda(self):
        fm = torch.tensor(0.5)
        aux = (torch.tensor(2.0), torch.tensor(3.0), torch.tensor(4.0))
        base = float(total_loss(fm, aux, LossWeights(lambda_om=0.0)))
        bumped = float(total_loss(fm, aux, LossWeights(lambda_om=1.0)))
        assert bumped - base == pytest.approx(2.0)


class TestRegionAttention:
    def test_peak(self):
        assert region_attention_weight(0.3, 0.7, 0.3, 0.7, sigma=0.1) == pytest.approx(1.0)

    def test_analytic_decay(self):
        sigma = 0.2
        d2 = 2 * sigma**2
        w = region_attention_weight(np.sqrt(d2), 0.0, 0.0, 0.0, sigma)
        assert w == pytest.approx(np.exp(-1.0))

    def test_large_sigma_uniform(self):
        w = region_attention_weight(1.0, 1.0, 0.0, 0.0, sigma=1e6)
        assert w == pytest.approx(1.0, abs=1e-9)


class TestHungarian:
    def test_batch_of_one(self):
        assert list(ot_pair_assignment(np.zeros((1, 5)), np.ones((1, 5)))) == [0]

    def test_two_by_two(self):
        assert list(hungarian(np.array([[0.0, 1.0], [1.0, 0.0]]))) == [0, 1]
        assert list(hungarian(np.array([[1.0, 0.0], [0.0, 1.0]]))) == [1, 0]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            n = rng.integers(2, 7)
            cost = rng.uniform(size=(n, n))
            assign = hungarian(cost)
            best = min(
                itertools.permutations(range(n)),
                key=lambda p: sum(cost[i, p[i]] for i in range(n)),
            )
            got = sum(cost[i, assign[i]] for i in range(n))
            want = sum(cost[i, best[i]] for i in range(n))
            assert got == pytest.approx(want, abs=1e-12)

    def test_never_worse_than_identity(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            noise = rng.normal(size=(6, 10))
            actions = rng.normal(size=(6, 10))
            assign = ot_pair_assignment(noise, actions)
            cost = ((noise[:, None] - actions[None]) ** 2).sum(-1)
            assert cost[np.arange(6), assign].sum() <= np.trace(cost) + 1e-12
