import numpy as np
import pytest
import torch

from egoflow.errors import EmptyDataset
from egoflow.ict import NormStats
from egoflow.policy import (
    LossWeights,
    NetConfig,
    PolicyNet,
    TrainConfig,
    TrainSample,
    grad_check,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    train,
    validate_fm,
)
from egoflow.policy.train import _val_batches, collate


def toy_sample(rng, chunk=None):
    return TrainSample(
        tokens=rng.normal(size=(3, 29)).astype(np.float32),
        slots=np.arange(3),
        present=np.ones(3, dtype=bool),
        chunk=(chunk if chunk is not None else rng.normal(size=(50, 20))).astype(np.float32),
        om=np.zeros((50, 9), dtype=np.float32),
        om_mask=0.0,
        trace2d=np.full((50, 3, 2), 0.5, dtype=np.float32),
        trace2d_mask=np.zeros(3, dtype=np.float32),
        lc=np.zeros((2, 29), dtype=np.float32),
        lc_mask=np.zeros(2, dtype=np.float32),
        anchor_uv=np.array([0.5, 0.5], dtype=np.float32),
    )


class TestLrSchedule:
    cfg = TrainConfig(base_lr=1e-4, warmup_steps=200, min_lr_ratio=0.05)

    def test_closed_form_points(self):
        total = 1000
        assert lr_at(0, total, self.cfg) == 0.0
        assert lr_at(100, total, self.cfg) == pytest.approx(0.5e-4)
        assert lr_at(200, total, self.cfg) == pytest.approx(1e-4)
        assert lr_at(total, total, self.cfg) == pytest.approx(0.05e-4)

    def test_monotone_decay_after_warmup(self):
        total = 2000
        values = [lr_at(s, total, self.cfg) for s in range(200, 2001, 100)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestTrainLoop:
    def test_empty_dataset(self):
        with pytest.raises(EmptyDataset):
            train(TrainConfig(max_steps=1), [], NormStats(np.zeros(3), np.ones(3)))

    def test_short_run_and_grad_clip(self):
        rng = np.random.default_rng(0)
        samples = [toy_sample(rng) for _ in range(8)]
        cfg = TrainConfig(max_steps=30, batch_size=4, seed=0, log_every=10, val_every=30)
        result = train(cfg, samples, NormStats(np.zeros(3), np.ones(3)))
        assert result.steps == 30
        assert np.isfinite(result.final_val_fm)
        for row in result.history:
            assert np.isfinite(row["total"])

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(1)
        samples = [toy_sample(rng) for _ in range(8)]
        stats = NormStats(np.zeros(3), np.ones(3))
        res_a = train(TrainConfig(max_steps=25, batch_size=4, seed=7), samples, stats)
        res_b = train(TrainConfig(max_steps=25, batch_size=4, seed=7), samples, stats)
        for (ka, va), (kb, vb) in zip(res_a.net.state_dict().items(), res_b.net.state_dict().items()):
            assert ka == kb
            assert torch.equal(va, vb)
        assert res_a.final_val_fm == res_b.final_val_fm

    def test_ot_flag_runs(self):
        rng = np.random.default_rng(2)
        samples = [toy_sample(rng) for _ in range(8)]
        cfg = TrainConfig(max_steps=10, batch_size=4, seed=0, ot_cfm=True)
        result = train(cfg, samples, NormStats(np.zeros(3), np.ones(3)))
        assert result.steps == 10

    def test_ema_tracks_params(self):
        rng = np.random.default_rng(3)
        samples = [toy_sample(rng) for _ in range(8)]
        cfg = TrainConfig(max_steps=40, batch_size=4, seed=0, ema_decay=0.5)
        result = train(cfg, samples, NormStats(np.zeros(3), np.ones(3)))
        raw = result.net.state_dict()
        for k, v in result.ema_params.items():
            if v.dtype.is_floating_point:
                assert torch.isfinite(v).all()
                # fast decay: EMA close to raw weights by the end
                assert (v - raw[k]).abs().max() < 0.1


class TestGradCheck:
    def _small(self, seed):
        rng = np.random.default_rng(seed)
        net = PolicyNet(NetConfig(ctx_dim=8, hidden=12, chunk_steps=4, action_dim=20, time_dim=8))
        batch = collate([_shrink(toy_sample(rng))])
        return net, batch

    def test_analytic_matches_fd(self):
        net, batch = self._small(0)
        err = grad_check(net, batch, eps=1e-4, num_params=150, seed=0)
        assert err < 1e-4

    def test_negative_control(self):
        net, batch = self._small(1)
        err = grad_check(net, batch, eps=1e-4, num_params=60, seed=1, corrupt=True)
        assert err > 1e-2


def _shrink(sample: TrainSample) -> TrainSample:
    sample.chunk = sample.chunk[:4]
    sample.om = sample.om[:4]
    sample.trace2d = sample.trace2d[:4]
    return sample


class TestCheckpoint:
    def test_round_trip_bit_exact_val(self, tmp_path):
        rng = np.random.default_rng(4)
        samples = [toy_sample(rng) for _ in range(10)]
        stats = NormStats(np.array([0.1, 0.2, 0.3]), np.array([0.2, 0.2, 0.2]))
        cfg = TrainConfig(max_steps=20, batch_size=4, seed=0, val_fraction=0.2)
        result = train(cfg, samples, stats)
        save_checkpoint(tmp_path / "ckpt", result)
        raw, ema, stats2, manifest = load_checkpoint(tmp_path / "ckpt")
        assert np.allclose(stats2.mean, stats.mean)
        # identical weights -> bit-identical validation loss
        val_pool = [samples[i] for i in range(2)]
        batches = _val_batches(val_pool, cfg)
        w = LossWeights()
        before = validate_fm(result.net, batches, w)
        after = validate_fm(raw, batches, w)
        assert before == after
        for k, v in result.ema_params.items():
            assert torch.allclose(ema.state_dict()[k].float(), v.float())

    def test_manifest_fields(self, tmp_path):
        rng = np.random.default_rng(5)
        samples = [toy_sample(rng) for _ in range(4)]
        result = train(TrainConfig(max_steps=5, batch_size=2, seed=0), samples, NormStats(np.zeros(3), np.ones(3)))
        save_checkpoint(tmp_path / "c", result, extra_meta={"note": "x"})
        import json

        manifest = json.loads((tmp_path / "c" / "manifest.json").read_text())
        assert manifest["dtype"] == "<f4"
        names = {t["name"] for t in manifest["tensors"]}
        assert any(n.startswith("raw.") for n in names)
        assert any(n.startswith("ema.") for n in names)
        assert "norm_stats" in manifest and manifest["meta"]["note"] == "x"


class TestTransformerVariant:
    def test_forward_and_one_step(self):
        rng = np.random.default_rng(6)
        samples = [toy_sample(rng) for _ in range(4)]
        cfg = TrainConfig(
            max_steps=3,
            batch_size=2,
            seed=0,
            net=NetConfig(arch="transformer", tf_layers=1, tf_heads=2, tf_dim=32),
        )
        result = train(cfg, samples, NormStats(np.zeros(3), np.ones(3)))
        assert result.steps == 3

    def test_raster_stream_smoke(self):
        rng = np.random.default_rng(7)
        sample = toy_sample(rng)
        sample.raster = rng.uniform(size=(4, 32, 32)).astype(np.float32)
        cfg = TrainConfig(max_steps=3, batch_size=2, seed=0, net=NetConfig(use_raster=True))
        result = train(cfg, [sample] * 4, NormStats(np.zeros(3), np.ones(3)))
        assert result.steps == 3
