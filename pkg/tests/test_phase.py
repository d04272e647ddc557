import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egoflow.errors import TooShort
from egoflow.numerics.se3 import SE3
from egoflow.phase import (
    PhaseConfig,
    PhaseLabel,
    classify_phases,
    core_labels,
    head_speeds,
    select_training_frames,
)
from egoflow.synth.scene import rot_z

DT = 1.0 / 30.0


def static_traj(n):
    return [SE3.identity() for _ in range(n)]


class TestHeadSpeeds:
    def test_static(self):
        lin, ang = head_speeds(static_traj(20), DT)
        assert np.allclose(lin, 0.0)
        assert np.allclose(ang, 0.0)

    def test_uniform_translation(self):
        traj = [SE3(np.eye(3), np.array([0.1 * t, 0.0, 0.0])) for t in range(20)]
        lin, ang = head_speeds(traj, DT)
        assert np.allclose(lin, 3.0)
        assert np.allclose(ang, 0.0)

    def test_uniform_rotation(self):
        traj = [SE3(rot_z(0.01 * t), np.zeros(3)) for t in range(20)]
        lin, ang = head_speeds(traj, DT)
        assert np.allclose(ang, 0.3, atol=1e-9)

    def test_too_short(self):
        with pytest.raises(TooShort):
            head_speeds(static_traj(1), DT)


def make_signals(n, segments):
    """segments: list of (length, lin, ang, hand)."""
    lin = np.concatenate([np.full(k, v) for k, v, _, _ in segments])
    ang = np.concatenate([np.full(k, w) for k, _, w, _ in segments])
    hand = np.concatenate([np.full(k, h) for k, _, _, h in segments])
    assert lin.size == n
    return lin, ang, hand


class TestClassify:
    cfg = PhaseConfig()

    def test_long_still_tail_is_finished(self):
        # 60 moving frames then 40 still frames (head + hand at rest).
        lin, ang, hand = make_signals(100, [(60, 0.5, 0.0, 0.0), (40, 0.001, 0.001, 0.0)])
        labels = classify_phases(lin, ang, hand, self.cfg)
        assert (labels[-20:] == PhaseLabel.FINISHED).all()

    def test_manip_requires_stop_hold(self):
        # A 10-frame stop inside walking never becomes Manip (hold is 15).
        lin, ang, hand = make_signals(100, [(45, 0.5, 0.0, 0.0), (10, 0.001, 0.0, 0.1), (45, 0.5, 0.0, 0.0)])
        labels = classify_phases(lin, ang, hand, self.cfg)
        assert not (labels == PhaseLabel.MANIP).any()

    def test_manip_detected_with_moving_hand(self):
        lin, ang, hand = make_signals(120, [(40, 0.5, 0.0, 0.0), (80, 0.001, 0.001, 0.08)])
        labels = classify_phases(lin, ang, hand, self.cfg)
        # hand keeps moving at 0.08 m/s: stopped head -> Manip, not Finished
        assert (labels[60:110] == PhaseLabel.MANIP).all()

    def test_hand_demotion(self):
        # Still head but hand sweeping at 0.3 m/s: Manip demoted to Transition.
        lin, ang, hand = make_signals(120, [(40, 0.5, 0.0, 0.0), (40, 0.001, 0.0, 0.3), (40, 0.001, 0.0, 0.05)])
        labels = classify_phases(lin, ang, hand, self.cfg)
        assert (labels[45:75] == PhaseLabel.TRANSITION).all()
        assert (labels[90:110] == PhaseLabel.MANIP).all()

    def test_rotate_gate(self):
        lin, ang, hand = make_signals(100, [(50, 0.06, 0.2, 0.0), (50, 0.5, 0.0, 0.0)])
        labels = classify_phases(lin, ang, hand, self.cfg)
        assert (labels[10:40] == PhaseLabel.ROTATE).all()
        # fast linear speed disqualifies Rotate
        lin2 = np.full(100, 0.2)
        labels2 = classify_phases(lin2, np.full(100, 0.2), np.zeros(100), self.cfg)
        assert not (labels2 == PhaseLabel.ROTATE).any()

    def test_transition_buffers_flank_changes(self):
        lin, ang, hand = make_signals(120, [(60, 0.5, 0.0, 0.0), (60, 0.001, 0.001, 0.08)])
        labels = classify_phases(lin, ang, hand, self.cfg)
        changes = np.flatnonzero(labels[1:] != labels[:-1]) + 1
        for c in changes:
            pair = (labels[c - 1], labels[c])
            assert PhaseLabel.TRANSITION in pair

    def test_select_training_frames(self):
        labels = np.array([1, 2, 0, 3, 4])
        assert list(select_training_frames(labels)) == [2, 4]
        assert select_training_frames(np.full(10, PhaseLabel.FORWARD)).size == 0


class TestSelectionProperties:
    def test_idempotent_monotone(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 5, size=200)
        sel = select_training_frames(labels)
        assert np.array_equal(select_training_frames(labels), sel)
        labels2 = labels.copy()
        labels2[labels2 == PhaseLabel.FORWARD] = PhaseLabel.MANIP
        sel2 = select_training_frames(labels2)
        assert set(sel).issubset(set(sel2))


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_property_vstop_monotone_core(seed):
    """Raising v_stop never shrinks the kept (Manip + Finished) core set."""
    rng = np.random.default_rng(seed)
    n = 150
    lin = np.abs(rng.normal(0.05, 0.05, size=n))
    ang = np.abs(rng.normal(0.05, 0.05, size=n))
    hand = np.abs(rng.normal(0.02, 0.03, size=n))
    lo = core_labels(lin, ang, hand, PhaseConfig(v_stop=0.03))
    hi = core_labels(lin, ang, hand, PhaseConfig(v_stop=0.06))
    kept_lo = np.isin(lo, (PhaseLabel.MANIP, PhaseLabel.FINISHED))
    kept_hi = np.isin(hi, (PhaseLabel.MANIP, PhaseLabel.FINISHED))
    assert not (kept_lo & ~kept_hi).any()


def test_classification_deterministic():
    rng = np.random.default_rng(3)
    lin = np.abs(rng.normal(0.1, 0.1, size=100))
    ang = np.abs(rng.normal(0.1, 0.1, size=100))
    hand = np.abs(rng.normal(0.05, 0.05, size=100))
    a = classify_phases(lin, ang, hand, PhaseConfig())
    b = classify_phases(lin, ang, hand, PhaseConfig())
    assert np.array_equal(a, b)
