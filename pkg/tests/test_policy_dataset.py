import numpy as np
import pytest

from egoflow.errors import RecordingTooShort
from egoflow.ict import RefFrameMode, TYPE_HAND
from egoflow.numerics.rotation import rotation_angle, six_d_to_rot
from egoflow.pipeline import fit_corpus_stats, preprocess_recording
from egoflow.policy import (
    AugmentConfig,
    build_dataset,
    inject_state_noise,
    sample_at,
    tensorize_recording,
)
from egoflow.policy.losses import CHUNK_STEPS, GRASP_LOGIT
from egoflow.synth import SceneSpec, gen_recording


@pytest.fixture(scope="module")
def preprocessed():
    spec = SceneSpec(task="pick-place", seed=21, offset_range=(0.1, 0.4))
    rec, gt = gen_recording(spec)
    pre = preprocess_recording(
        rec, "r21", RefFrameMode.CAMERA,
        orientations={oid: gt.object_poses[oid][0].rot for oid in rec.tracks},
    )
    stats = fit_corpus_stats([pre])
    return pre, stats


class TestBuildDataset:
    def test_shapes(self, preprocessed):
        pre, stats = preprocessed
        samples = build_dataset([pre], stats, stride=25)
        assert len(samples) == len(pre.selected[::25])
        s = samples[0]
        assert s.chunk.shape == (CHUNK_STEPS, 20)
        assert s.om.shape == (CHUNK_STEPS, 9)
        assert s.trace2d.shape == (CHUNK_STEPS, 3, 2)
        assert s.lc.shape == (2, 29)
        assert s.tokens.shape[1] == 29

    def test_terminal_hold_padding(self, preprocessed):
        pre, stats = preprocessed
        rt = tensorize_recording(pre, stats)
        last = int(rt.selected[-1])
        s = sample_at(rt, last)
        # every chunk row beyond the recording end replicates the final action
        assert np.allclose(s.chunk[5:], s.chunk[-1])

    def test_2d_targets_in_unit_square(self, preprocessed):
        pre, stats = preprocessed
        samples = build_dataset([pre], stats, stride=40)
        for s in samples:
            assert (s.trace2d >= 0.0).all() and (s.trace2d <= 1.0).all()

    def test_grasp_logits_are_binary(self, preprocessed):
        pre, stats = preprocessed
        samples = build_dataset([pre], stats, stride=40)
        for s in samples:
            assert set(np.unique(s.chunk[:, [9, 19]])) <= {-GRASP_LOGIT, GRASP_LOGIT}

    def test_chunk_rotations_decodable(self, preprocessed):
        pre, stats = preprocessed
        rt = tensorize_recording(pre, stats)
        s = sample_at(rt, int(rt.selected[10]))
        for j in range(0, CHUNK_STEPS, 7):
            for start in (3, 13):
                rot = six_d_to_rot(s.chunk[j, start : start + 6].astype(float))
                assert np.max(np.abs(rot.T @ rot - np.eye(3))) < 1e-6

    def test_empty_selection_raises(self, preprocessed):
        pre, stats = preprocessed
        import copy

        empty = copy.copy(pre)
        empty.selected = np.array([], dtype=np.int64)
        with pytest.raises(RecordingTooShort):
            build_dataset([empty], stats)


class TestAugmentation:
    def test_disabled_is_bit_identical(self, preprocessed):
        pre, stats = preprocessed
        rt = tensorize_recording(pre, stats)
        t = int(rt.selected[5])
        a = sample_at(rt, t)
        b = sample_at(rt, t)
        assert np.array_equal(a.chunk, b.chunk)
        assert np.array_equal(a.tokens, b.tokens)

    def test_substep_endpoints(self, preprocessed):
        pre, stats = preprocessed

        class FixedRng:
            def __init__(self, alpha):
                self.alpha = alpha
                self.calls = 0

            def uniform(self, *a, **k):
                self.calls += 1
                return 0.0 if self.calls == 1 else self.alpha  # always blend

            def normal(self, loc=0.0, scale=1.0, size=None):
                return np.zeros(size if size is not None else ())

        rt = tensorize_recording(pre, stats)
        t = int(rt.selected[5])
        aug = AugmentConfig(substep_prob=1.0, sigma_pos=0.0, sigma_rot_deg=0.0)
        s0 = sample_at(rt, t, rng=FixedRng(0.0), augment=aug)
        s1 = sample_at(rt, t, rng=FixedRng(1.0), augment=aug)
        base0 = sample_at(rt, t)
        base1 = sample_at(rt, t + 1)
        assert np.allclose(s0.chunk, base0.chunk, atol=1e-6)
        assert np.allclose(s1.chunk, base1.chunk, atol=1e-6)

    def test_rotation_noise_bounded(self, preprocessed):
        # 0.5 deg sigma truncated at 2 sigma: recovered angle change <= 1 deg.
        pre, stats = preprocessed
        rt = tensorize_recording(pre, stats)
        t = int(rt.selected[5])
        base = sample_at(rt, t)
        rng = np.random.default_rng(0)
        aug = AugmentConfig(substep_prob=0.0, sigma_pos=0.0, sigma_rot_deg=0.5)
        for _ in range(20):
            s = sample_at(rt, t, rng=rng, augment=aug)
            for j in range(0, CHUNK_STEPS, 11):
                r_base = six_d_to_rot(base.chunk[j, 3:9].astype(float))
                r_aug = six_d_to_rot(s.chunk[j, 3:9].astype(float))
                delta = rotation_angle(r_base.T @ r_aug)
                assert delta <= np.deg2rad(1.0) + 1e-6  # float32 storage epsilon


class TestStateNoise:
    def test_sigma_zero_identity(self, preprocessed):
        pre, stats = preprocessed
        rt = tensorize_recording(pre, stats)
        tokens = rt.tokens[rt.selected[:8]]
        out = inject_state_noise(tokens, {"pos": 0.0, "rot": 0.0, "grasp": 0.0}, np.random.default_rng(0))
        assert np.array_equal(out, tokens)

    def test_object_tokens_untouched(self, preprocessed):
        pre, stats = preprocessed
        rt = tensorize_recording(pre, stats)
        tokens = rt.tokens[rt.selected[:8]]
        out = inject_state_noise(tokens, {"pos": 0.5, "rot": 0.5, "grasp": 0.5}, np.random.default_rng(1))
        obj = tokens[..., 0] != TYPE_HAND
        assert np.array_equal(out[obj], tokens[obj])
        hand = ~obj
        assert not np.array_equal(out[hand], tokens[hand])

    def test_empirical_std_matches_sigma(self):
        rng = np.random.default_rng(2)
        tokens = np.zeros((10_000, 1, 29), dtype=np.float32)
        tokens[..., 0] = TYPE_HAND
        out = inject_state_noise(tokens, {"pos": 0.3, "rot": 0.1, "grasp": 0.2}, rng)
        diff = (out - tokens).reshape(-1, 29)
        assert abs(diff[:, 1].std() - 0.3) / 0.3 < 0.05
        assert abs(diff[:, 4].std() - 0.1) / 0.1 < 0.05
        assert abs(diff[:, 28].std() - 0.2) / 0.2 < 0.05
