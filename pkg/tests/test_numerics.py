import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egoflow.errors import BehindCamera, DegenerateFrame, SeriesTooShort
from egoflow.numerics import (
    SE3,
    Intrinsics,
    ema_axes,
    flatten_se3_9d,
    flicker_suppress,
    gram_schmidt_frame,
    interpolate_gaps,
    median_filter,
    project,
    quat_from_rotmat,
    quat_to_rotmat,
    rot_to_6d,
    savitzky_golay,
    six_d_to_rot,
    slerp,
    unflatten_se3_9d,
)
from egoflow.ict import NormStats


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return quat_to_rotmat(q)


def assert_rotmat(rot, tol=1e-9):
    assert np.max(np.abs(rot.T @ rot - np.eye(3))) <= tol
    assert abs(np.linalg.det(rot) - 1.0) <= tol


class TestGramSchmidt:
    def test_canonical_axes(self):
        rot = gram_schmidt_frame(np.array([1.0, 0, 0]), np.array([0.0, 1, 0]))
        assert np.allclose(rot, np.eye(3), atol=1e-15)

    def test_normalization_strips_x_component(self):
        rot = gram_schmidt_frame(np.array([2.0, 0, 0]), np.array([1.0, 1, 0]))
        assert np.allclose(rot, np.eye(3), atol=1e-15)

    def test_random_inputs_orthonormal(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            x = rng.normal(size=3)
            y = rng.normal(size=3)
            rot = gram_schmidt_frame(x, y)
            assert_rotmat(rot, tol=1e-12)
            # column 0 parallel to x_raw
            assert np.linalg.norm(np.cross(rot[:, 0], x / np.linalg.norm(x))) < 1e-12

    def test_degenerate_inputs(self):
        with pytest.raises(DegenerateFrame):
            gram_schmidt_frame(np.zeros(3), np.array([0.0, 1, 0]))
        with pytest.raises(DegenerateFrame):
            gram_schmidt_frame(np.array([1.0, 0, 0]), np.array([2.0, 0, 0]))


class TestRot6D:
    def test_identity(self):
        assert np.allclose(six_d_to_rot(np.array([1.0, 0, 0, 0, 1, 0])), np.eye(3))
        assert np.allclose(rot_to_6d(np.eye(3)), [1, 0, 0, 0, 1, 0])

    def test_round_trip_random(self):
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(1000):
            rot = random_rotation(rng)
            back = six_d_to_rot(rot_to_6d(rot))
            worst = max(worst, np.linalg.norm(back - rot))
        assert worst < 1e-10

    def test_noisy_input_projects_to_rotation(self):
        # Monte-Carlo oracle: mean Frobenius error ~2.3e-3 for sigma=1e-3
        # component noise (individual Gaussian draws can reach ~6e-3).
        rng = np.random.default_rng(2)
        errors = []
        for _ in range(200):
            rot = random_rotation(rng)
            noisy = rot_to_6d(rot) + rng.normal(scale=1e-3, size=6)
            back = six_d_to_rot(noisy)
            assert_rotmat(back, tol=1e-12)
            errors.append(np.linalg.norm(back - rot))
        assert np.mean(errors) < 3e-3

    def test_collapsed_input(self):
        with pytest.raises(DegenerateFrame):
            six_d_to_rot(np.array([0.0, 0, 0, 0, 1, 0]))


class TestSlerp:
    def test_endpoints(self):
        rng = np.random.default_rng(3)
        q0 = quat_from_rotmat(random_rotation(rng))
        q1 = quat_from_rotmat(random_rotation(rng))
        assert np.allclose(slerp(q0, q1, 0.0), q0, atol=1e-12)
        out = slerp(q0, q1, 1.0)
        assert min(np.linalg.norm(out - q1), np.linalg.norm(out + q1)) < 1e-12

    def test_midpoint_analytic(self):
        q0 = np.array([1.0, 0, 0, 0])
        q1 = np.array([np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)])  # 90 deg about z
        mid = slerp(q0, q1, 0.5)
        expected = np.array([np.cos(np.pi / 8), 0, 0, np.sin(np.pi / 8)])  # 45 deg
        assert np.linalg.norm(mid - expected) < 1e-12

    def test_double_cover(self):
        rng = np.random.default_rng(4)
        q0 = quat_from_rotmat(random_rotation(rng))
        mid = slerp(q0, -q0, 0.5)
        assert np.allclose(quat_to_rotmat(mid), quat_to_rotmat(q0), atol=1e-9)

    def test_monotone_path(self):
        q0 = np.array([1.0, 0, 0, 0])
        q1 = quat_from_rotmat(quat_to_rotmat(np.array([np.cos(1.2), np.sin(1.2), 0, 0])))
        angles = []
        for alpha in np.linspace(0, 1, 21):
            q = slerp(q0, q1, alpha)
            angles.append(2 * np.arccos(np.clip(abs(np.dot(q, q0)), -1, 1)))
        assert np.all(np.diff(angles) >= -1e-12)


class TestSE3:
    def test_compose_inverse_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a = SE3(random_rotation(rng), rng.normal(size=3))
            ident = a.compose(a.inverse())
            assert np.max(np.abs(ident.rot - np.eye(3))) < 1e-12
            assert np.max(np.abs(ident.trans)) < 1e-12

    def test_identity_neutral(self):
        rng = np.random.default_rng(6)
        b = SE3(random_rotation(rng), rng.normal(size=3))
        out = SE3.identity().compose(b)
        assert out.almost_equal(b, tol=1e-15)

    def test_associativity(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a, b, c = (SE3(random_rotation(rng), rng.normal(size=3)) for _ in range(3))
            left = a.compose(b).compose(c)
            right = a.compose(b.compose(c))
            assert left.almost_equal(right, tol=1e-12)


class TestProject:
    K = Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)

    def test_optical_axis(self):
        uv = project(self.K, SE3.identity(), np.array([0.0, 0.0, 1.0]))
        assert np.allclose(uv, [320.0, 240.0])

    def test_analytic_offset(self):
        uv = project(self.K, SE3.identity(), np.array([0.1, 0.0, 1.0]))
        assert np.allclose(uv, [370.0, 240.0])

    def test_behind_camera(self):
        with pytest.raises(BehindCamera):
            project(self.K, SE3.identity(), np.array([0.0, 0.0, -1.0]))

    def test_invalid_intrinsics(self):
        with pytest.raises(ValueError):
            Intrinsics(fx=-1.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
        with pytest.raises(ValueError):
            Intrinsics(fx=500.0, fy=500.0, cx=700.0, cy=240.0, width=640, height=480)


class TestFlatten9D:
    stats = NormStats(mean=np.zeros(3), std=np.ones(3))

    def test_identity_pose(self):
        vec = flatten_se3_9d(SE3.identity(), self.stats)
        assert np.allclose(vec, [0, 0, 0, 1, 0, 0, 0, 1, 0])

    def test_translation_at_mean(self):
        stats = NormStats(mean=np.array([1.0, 2.0, 3.0]), std=np.array([0.5, 0.5, 0.5]))
        vec = flatten_se3_9d(SE3(np.eye(3), np.array([1.0, 2.0, 3.0])), stats)
        assert np.allclose(vec[:3], 0.0)

    def test_round_trip(self):
        rng = np.random.default_rng(8)
        stats = NormStats(mean=rng.normal(size=3), std=np.abs(rng.normal(size=3)) + 0.1)
        for _ in range(100):
            pose = SE3(random_rotation(rng), rng.normal(size=3))
            back = unflatten_se3_9d(flatten_se3_9d(pose, stats), stats)
            assert np.max(np.abs(back.rot - pose.rot)) < 1e-10
            assert np.max(np.abs(back.trans - pose.trans)) < 1e-10


class TestSavitzkyGolay:
    def test_constant_unchanged(self):
        series = np.full(50, 3.25)
        assert np.allclose(savitzky_golay(series), series, atol=1e-12)

    def test_quadratic_reproduced_interior(self):
        t = np.arange(60, dtype=float)
        series = 0.5 * t * t - 3.0 * t + 7.0
        out = savitzky_golay(series, window=21, order=2)
        interior = slice(10, 50)
        assert np.max(np.abs(out[interior] - series[interior])) < 1e-10

    def test_noise_variance_reduced(self):
        # Monte-Carlo oracle: smoothing must remove > 70% of noise variance.
        rng = np.random.default_rng(9)
        t = np.arange(200, dtype=float)
        clean = 0.01 * t * t
        sigma = 0.5
        ratios = []
        for _ in range(1000):
            noisy = clean + rng.normal(scale=sigma, size=t.size)
            smoothed = savitzky_golay(noisy, window=21, order=2)
            resid = smoothed[10:-10] - clean[10:-10]
            ratios.append(np.var(resid) / sigma**2)
        assert np.mean(ratios) < 0.3

    def test_too_short(self):
        with pytest.raises(SeriesTooShort):
            savitzky_golay(np.zeros(10), window=21, order=2)

    def test_multidim(self):
        t = np.arange(40, dtype=float)
        series = np.stack([t, 2 * t, t * t], axis=1)
        out = savitzky_golay(series, window=11, order=2)
        assert np.max(np.abs(out[5:-5] - series[5:-5])) < 1e-10


class TestEmaAxes:
    def test_constant_frame(self):
        frames = [(np.array([1.0, 0, 0]), np.array([0.0, 1, 0]))] * 20
        out = ema_axes(frames)
        for rot in out:
            assert np.allclose(rot, np.eye(3), atol=1e-12)

    def test_sign_flip_removed(self):
        x = np.array([1.0, 0, 0])
        y = np.array([0.0, 1, 0])
        frames = [(x, y)] * 10 + [(-x, -y)] + [(x, y)] * 10
        out = ema_axes(frames)
        for prev, cur in zip(out[:-1], out[1:]):
            assert np.dot(prev[:, 0], cur[:, 0]) > 0.0

    def test_outputs_orthonormal(self):
        rng = np.random.default_rng(10)
        frames = [(rng.normal(size=3), rng.normal(size=3)) for _ in range(100)]
        for rot in ema_axes(frames):
            assert_rotmat(rot)


class TestInterpolateGaps:
    def test_linear_fill(self):
        positions = [np.zeros(3), None, None, None, np.array([4.0, 0, 0])]
        pos, _, mask, unfilled = interpolate_gaps(positions)
        assert unfilled == []
        assert np.allclose(pos[1], [1, 0, 0])
        assert np.allclose(pos[2], [2, 0, 0])
        assert np.allclose(pos[3], [3, 0, 0])
        assert list(mask) == [False, True, True, True, False]

    def test_rotation_slerp_midpoint(self):
        r90 = quat_to_rotmat(np.array([np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)]))
        positions = [np.zeros(3), None, np.zeros(3)]
        rotations = [np.eye(3), None, r90]
        _, rots, _, _ = interpolate_gaps(positions, rotations)
        r45 = quat_to_rotmat(np.array([np.cos(np.pi / 8), 0, 0, np.sin(np.pi / 8)]))
        assert np.allclose(rots[1], r45, atol=1e-12)

    def test_long_gap_left_missing(self):
        positions = [np.zeros(3)] + [None] * 12 + [np.ones(3)]
        pos, _, mask, unfilled = interpolate_gaps(positions, max_gap=10)
        assert unfilled == [(1, 13)]
        assert all(p is None for p in pos[1:13])
        assert not mask.any()

    def test_boundary_gaps_reported(self):
        positions = [None, np.zeros(3), None]
        _, _, _, unfilled = interpolate_gaps(positions)
        assert unfilled == [(0, 1), (2, 3)]


class TestMedianFlicker:
    def test_constant_binary_unchanged(self):
        series = np.ones(10)
        assert np.allclose(median_filter(series, 3), series)
        assert np.array_equal(flicker_suppress(series.astype(bool), 3), series.astype(bool))

    def test_single_frame_flicker_removed(self):
        out = flicker_suppress(np.array([0, 0, 1, 0, 0], dtype=bool), min_run=2)
        assert not out.any()

    def test_median_matches_bruteforce(self):
        rng = np.random.default_rng(11)
        series = rng.integers(0, 2, size=31).astype(float)
        out = median_filter(series, 3)
        padded = np.pad(series, 1, mode="reflect")
        expected = np.array([np.median(padded[i : i + 3]) for i in range(31)])
        assert np.array_equal(out, expected)

    def test_flicker_keeps_long_runs(self):
        series = np.array([0] * 8 + [1] * 8 + [0] * 8, dtype=bool)
        out = flicker_suppress(series, min_run=5)
        assert np.array_equal(out, series)

    def test_too_short(self):
        with pytest.raises(SeriesTooShort):
            median_filter(np.zeros(2), 5)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_property_every_rotation_valid(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=3)
    y = rng.normal(size=3)
    if np.linalg.norm(x) < 1e-6 or np.linalg.norm(np.cross(x, y)) < 1e-6:
        return
    assert_rotmat(gram_schmidt_frame(x, y))


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_property_6d_round_trip(seed):
    rng = np.random.default_rng(seed)
    rot = random_rotation(rng)
    assert np.linalg.norm(six_d_to_rot(rot_to_6d(rot)) - rot) < 1e-10
