import numpy as np
import pytest

from egoflow.errors import InvalidSpec
from egoflow.numerics.camera import project
from egoflow.numerics.se3 import SE3
from egoflow.phase import PhaseLabel
from egoflow.synth import (
    ATTACH_TOLERANCE,
    SceneSpec,
    env_from_scene,
    gen_recording,
    make_env,
    sample_scene,
    step_env,
)
from egoflow.synth.scene import grasp_orientation


class TestSceneSpec:
    def test_defaults_valid(self):
        SceneSpec().validate()

    def test_invalid_task(self):
        with pytest.raises(InvalidSpec):
            SceneSpec(task="juggling").validate()

    def test_negative_noise(self):
        with pytest.raises(InvalidSpec):
            SceneSpec(sigma_px=-0.1).validate()

    def test_short_duration(self):
        with pytest.raises(InvalidSpec):
            SceneSpec(min_duration=50).validate()

    def test_empty_workspace(self):
        with pytest.raises(InvalidSpec):
            SceneSpec(workspace_x=(0.3, -0.3)).validate()


class TestGenRecording:
    def test_deterministic(self):
        spec = SceneSpec(task="pick-place", seed=11, sigma_px=0.4, sigma_kp=0.002, conf_dropout=0.02)
        rec_a, gt_a = gen_recording(spec)
        rec_b, gt_b = gen_recording(spec)
        assert np.array_equal(rec_a.timestamps_ns, rec_b.timestamps_ns)
        assert np.array_equal(rec_a.right_hand.keypoints, rec_b.right_hand.keypoints)
        assert np.array_equal(rec_a.tracks[0].pixels, rec_b.tracks[0].pixels)
        assert np.array_equal(gt_a.phases, gt_b.phases)

    def test_noiseless_tracks_equal_projection(self):
        spec = SceneSpec(task="pick-place", seed=2)
        rec, gt = gen_recording(spec)
        kp0 = gt.object_keypoints[1]  # the plate never moves
        for t in range(0, rec.num_frames, 57):
            for n in range(kp0.shape[0]):
                if not rec.tracks[1].visible[t, n]:
                    continue
                uv = project(rec.intrinsics, rec.camera_poses[t], kp0[n])
                assert np.allclose(uv, rec.tracks[1].pixels[t, n], atol=1e-9)

    def test_phase_schedule(self):
        rec, gt = gen_recording(SceneSpec(task="pick-place", seed=1))
        labels = gt.phases
        assert labels[0] == PhaseLabel.FORWARD
        assert (labels[-40:] == PhaseLabel.FINISHED).all()
        assert (labels == PhaseLabel.ROTATE).sum() >= 30  # sweep segment
        assert (labels == PhaseLabel.MANIP).sum() >= 200

    def test_min_duration_respected(self):
        rec, _ = gen_recording(SceneSpec(task="reach", seed=0, min_duration=2000))
        assert rec.num_frames >= 2000

    def test_hand_speed_under_demotion_threshold(self):
        # Manip-phase hand speeds must stay below the 0.15 m/s demotion gate.
        rec, gt = gen_recording(SceneSpec(task="pick-place", seed=5))
        pos = np.stack([p.trans for p in gt.gripper_poses["right"]])
        speed = np.linalg.norm(np.diff(pos, axis=0), axis=1) / rec.dt
        manip = gt.phases[1:] == PhaseLabel.MANIP
        assert speed[manip].max() < 0.15

    def test_head_still_during_manip(self):
        rec, gt = gen_recording(SceneSpec(task="pick-place", seed=6))
        from egoflow.phase import head_speeds

        lin, ang = head_speeds(rec.camera_poses, rec.dt)
        manip = gt.phases == PhaseLabel.MANIP
        assert lin[manip].max() < 0.03
        assert ang[manip].max() < 0.15

    def test_bimanual_schedule(self):
        rec, gt = gen_recording(SceneSpec(task="bimanual-ordered", seed=3))
        events = gt.goals["events"]
        assert set(events) == {0, 1}
        assert events[0]["hand"] == "left" and events[1]["hand"] == "right"
        assert events[0]["release"] <= events[1]["attach"]

    def test_dual_goal_modes(self):
        chosen = set()
        for seed in range(8):
            _, gt = gen_recording(SceneSpec(task="pick-place", seed=seed, dual_goal=True))
            chosen.add(gt.goals["chosen_mode"])
        assert chosen == {"A", "B"}


class TestEnv:
    def _simple_env(self):
        spec = SceneSpec(task="pick-place", seed=4)
        scene = sample_scene(spec, np.random.default_rng(4))
        return env_from_scene(scene, "pick-place")

    def test_attach_and_rigid_carry(self):
        env, task = self._simple_env()
        item = task.item_ids[0]
        hand = SE3(env.hand_poses["right"].rot, env.object_poses[item].trans + [0.005, 0, 0])
        env = step_env(env, {"left": env.hand_poses["left"], "right": hand}, {"left": False, "right": True}, task)
        assert env.attached_to[item] == "right"
        moved = SE3(hand.rot, hand.trans + [0.1, 0.0, 0.0])
        env2 = step_env(env, {"left": env.hand_poses["left"], "right": moved}, {"left": False, "right": True}, task)
        assert np.allclose(env2.object_poses[item].trans - env.object_poses[item].trans, [0.1, 0, 0])

    def test_release_leaves_object(self):
        env, task = self._simple_env()
        item = task.item_ids[0]
        hand = SE3(env.hand_poses["right"].rot, env.object_poses[item].trans)
        env = step_env(env, {"left": env.hand_poses["left"], "right": hand}, {"left": False, "right": True}, task)
        lifted = SE3(hand.rot, hand.trans + [0.0, 0.0, 0.1])
        env = step_env(env, {"left": env.hand_poses["left"], "right": lifted}, {"left": False, "right": True}, task)
        drop = env.object_poses[item].trans.copy()
        env = step_env(env, {"left": env.hand_poses["left"], "right": lifted}, {"left": False, "right": False}, task)
        assert env.attached_to[item] is None
        away = SE3(lifted.rot, lifted.trans + [0.2, 0, 0])
        env = step_env(env, {"left": env.hand_poses["left"], "right": away}, {"left": False, "right": False}, task)
        assert np.allclose(env.object_poses[item].trans, drop)

    def test_attach_requires_tolerance(self):
        env, task = self._simple_env()
        item = task.item_ids[0]
        far = SE3(env.hand_poses["right"].rot, env.object_poses[item].trans + [ATTACH_TOLERANCE + 0.02, 0, 0])
        env = step_env(env, {"left": env.hand_poses["left"], "right": far}, {"left": False, "right": True}, task)
        assert env.attached_to[item] is None

    def test_relative_transform_constant_while_attached(self):
        rng = np.random.default_rng(8)
        env, task = self._simple_env()
        item = task.item_ids[0]
        hand = SE3(env.hand_poses["right"].rot, env.object_poses[item].trans)
        env = step_env(env, {"left": env.hand_poses["left"], "right": hand}, {"left": False, "right": True}, task)
        rel0 = env.hand_poses["right"].inverse().compose(env.object_poses[item])
        for _ in range(20):
            target = SE3(grasp_orientation(rng.uniform(-0.3, 0.3)), hand.trans + rng.normal(0, 0.05, 3))
            env = step_env(env, {"left": env.hand_poses["left"], "right": target}, {"left": False, "right": True}, task)
            rel = env.hand_poses["right"].inverse().compose(env.object_poses[item])
            assert np.max(np.abs(rel.rot - rel0.rot)) < 1e-12
            assert np.max(np.abs(rel.trans - rel0.trans)) < 1e-12

    def test_gt_replay_succeeds(self):
        for seed in (1, 2, 3):
            spec = SceneSpec(task="pick-place", seed=seed)
            rec, gt = gen_recording(spec)
            scene = sample_scene(spec, np.random.default_rng(seed))
            env, task = env_from_scene(scene, "pick-place")
            for t in range(rec.num_frames):
                targets = {s: gt.gripper_poses[s][t] for s in ("left", "right")}
                close = {s: bool(gt.grasp[s][t] < 0.5) for s in ("left", "right")}
                env = step_env(env, targets, close, task)
                if env.success:
                    break
            assert env.success

    def test_gt_replay_bimanual(self):
        spec = SceneSpec(task="bimanual-ordered", seed=2)
        rec, gt = gen_recording(spec)
        scene = sample_scene(spec, np.random.default_rng(2))
        env, task = env_from_scene(scene, "bimanual-ordered")
        for t in range(rec.num_frames):
            targets = {s: gt.gripper_poses[s][t] for s in ("left", "right")}
            close = {s: bool(gt.grasp[s][t] < 0.5) for s in ("left", "right")}
            env = step_env(env, targets, close, task)
        assert env.success

    def test_make_env_matches_recording_scene(self):
        spec = SceneSpec(task="pick-place", seed=9)
        _, gt = gen_recording(spec)
        env, task = make_env(spec, seed=9)
        item = task.item_ids[0]
        assert np.allclose(env.object_poses[item].trans, gt.object_poses[item][0].trans)
        assert np.allclose(task.goal_positions[item], gt.goals["goal_positions"][item])
