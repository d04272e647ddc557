"""Synthetic egocentric recording generator with full ground truth.

Every episode follows the same schedule: a walk toward the desk (Forward),
a slow panning scene sweep that gives triangulation its baseline (Rotate),
the scripted manipulation (Manip), and a final hold (Finished).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from egoflow.numerics.camera import Intrinsics, projection_matrix
from egoflow.numerics.se3 import SE3
from egoflow.phase import PhaseLabel
from egoflow.recording import GroundTruth, HandStream, ObjectTracks, Recording
from egoflow.synth.scene import (
    APERTURE_CLOSED,
    APERTURE_OPEN,
    HOVER_HEIGHT,
    SPEED_DESCEND,
    SPEED_FINAL,
    SPEED_TRANSPORT,
    MotionTrack,
    SceneSample,
    SceneSpec,
    _trapezoid_s,
    aperture_to_grasp,
    grasp_orientation,
    look_at,
    move_frames,
    object_ring,
    rot_z,
    sample_scene,
    skeleton_sequence,
    trapezoid_positions,
)

DEFAULT_INTRINSICS = Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)

CLOSE_FRAMES = 9  # linear aperture ramp length
SETTLE_FRAMES = 3
FINISH_HOLD = 45
APERTURE_BINARIZE = 0.5 * (0.02 + 0.10)  # aperture at which g crosses 0.5
OCCLUSION_RADIUS = 0.09

WALK_SPEED = 0.5
WALK_BACK = 0.75
SWEEP_BASELINE = 0.20
SWEEP_SPEED = 0.077  # plateau, under the 0.08 m/s Rotate gate
SWEEP_YAW = 0.42  # rad, plateau rate ~0.16 rad/s over the Rotate gate
BOB_AMPLITUDE = 0.002
BOB_HZ = 0.5
WOBBLE_AMPLITUDE = 0.008
WOBBLE_HZ = 0.3


@dataclass
class HandScript:
    positions: np.ndarray  # (Tm, 3) from manipulation start
    aperture: np.ndarray  # (Tm,)
    rotation: np.ndarray  # constant 3x3 world orientation


def _script_reach(track: MotionTrack, item: np.ndarray) -> None:
    track.move_to(item + [0.0, 0.0, HOVER_HEIGHT], SPEED_TRANSPORT)
    track.move_to(item + [0.0, 0.0, 0.05], SPEED_DESCEND)
    track.move_to(item + [0.0, 0.0, 0.02], SPEED_FINAL)


def _script_pick_place(track: MotionTrack, item: np.ndarray, goal: np.ndarray, rest_end: np.ndarray) -> None:
    place = goal + [0.0, 0.0, 0.02]
    track.move_to(item + [0.0, 0.0, HOVER_HEIGHT], SPEED_TRANSPORT)
    track.move_to(item + [0.0, 0.0, 0.03], SPEED_DESCEND)
    track.move_to(item, SPEED_FINAL)
    track.set_aperture(APERTURE_CLOSED, CLOSE_FRAMES)
    track.hold(SETTLE_FRAMES)
    track.move_to(item + [0.0, 0.0, HOVER_HEIGHT], SPEED_DESCEND)
    track.move_to(place + [0.0, 0.0, HOVER_HEIGHT], SPEED_TRANSPORT)
    track.move_to(place + [0.0, 0.0, 0.03], SPEED_DESCEND)
    track.move_to(place, SPEED_FINAL)
    track.set_aperture(APERTURE_OPEN, CLOSE_FRAMES)
    track.hold(SETTLE_FRAMES)
    track.move_to(place + [0.0, 0.0, 0.10], SPEED_DESCEND)
    track.move_to(rest_end, SPEED_TRANSPORT)


def _build_hand_scripts(spec: SceneSpec, scene: SceneSample) -> dict[str, HandScript]:
    tracks = {side: MotionTrack(scene.hand_rest[side], spec.fps) for side in ("left", "right")}
    if spec.task == "reach":
        _script_reach(tracks["right"], scene.objects[scene.item_ids[0]].position)
    elif spec.task == "pick-place":
        item_id = scene.item_ids[0]
        _script_pick_place(
            tracks["right"],
            scene.objects[item_id].position,
            scene.goal_positions[item_id],
            scene.hand_rest["right"],
        )
    else:  # bimanual-ordered: left serves its item first, right follows
        left_item, right_item = scene.item_ids
        _script_pick_place(
            tracks["left"],
            scene.objects[left_item].position,
            scene.goal_positions[left_item],
            scene.hand_rest["left"],
        )
        tracks["right"].pad_to(tracks["left"].frames)
        _script_pick_place(
            tracks["right"],
            scene.objects[right_item].position,
            scene.goal_positions[right_item],
            scene.hand_rest["right"],
        )
    frames = max(t.frames for t in tracks.values())
    for track in tracks.values():
        track.pad_to(frames)
    return {
        side: HandScript(
            positions=np.stack(track.positions),
            aperture=np.array(track.aperture),
            rotation=grasp_orientation(scene.grasp_yaw[side]),
        )
        for side, track in tracks.items()
    }


def _grasp_events(aperture: np.ndarray) -> list[tuple[int, int]]:
    """(attach, release) local frame pairs where the aperture crosses binarization."""
    closed = aperture < APERTURE_BINARIZE
    events = []
    start = None
    for i in range(len(closed)):
        if closed[i] and start is None:
            start = i
        elif not closed[i] and start is not None:
            events.append((start, i))
            start = None
    if start is not None:
        events.append((start, len(closed)))
    return events


def _camera_trajectory(spec: SceneSpec, scene: SceneSample, total_frames: int, walk_frames: int, sweep_frames: int):
    stand = scene.stand_position
    base = look_at(stand, scene.scene_center)
    sweep_start = stand + np.array([-SWEEP_BASELINE, 0.0, 0.0])
    walk_start = sweep_start + np.array([0.0, -WALK_BACK, 0.06])

    positions = np.empty((total_frames, 3))
    yaws = np.empty(total_frames)
    walk = trapezoid_positions(walk_start, sweep_start, walk_frames, spec.fps)
    positions[:walk_frames] = walk
    yaws[:walk_frames] = SWEEP_YAW

    sweep = trapezoid_positions(sweep_start, stand, sweep_frames, spec.fps)
    positions[walk_frames : walk_frames + sweep_frames] = sweep
    total_sweep_t = sweep_frames / spec.fps
    ramp = min(0.4, 0.4 * total_sweep_t)
    for k in range(sweep_frames):
        frac = _trapezoid_s((k + 1) / spec.fps, total_sweep_t, ramp)
        yaws[walk_frames + k] = SWEEP_YAW * (1.0 - frac)

    manip_start = walk_frames + sweep_frames
    for k in range(manip_start, total_frames):
        tau = (k - manip_start) / spec.fps
        positions[k] = stand + np.array([0.0, 0.0, BOB_AMPLITUDE * np.sin(2 * np.pi * BOB_HZ * tau)])
        yaws[k] = WOBBLE_AMPLITUDE * np.sin(2 * np.pi * WOBBLE_HZ * tau)

    return [SE3(rot_z(yaws[k]) @ base.rot, positions[k]) for k in range(total_frames)]


def gen_recording(spec: SceneSpec) -> tuple[Recording, GroundTruth]:
    """Deterministic synthetic recording + oracle ground truth for a seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    scene = sample_scene(spec, rng)
    scripts = _build_hand_scripts(spec, scene)

    walk_frames = move_frames(np.linalg.norm([WALK_BACK, 0.06]), WALK_SPEED, spec.fps)
    sweep_frames = move_frames(SWEEP_BASELINE, SWEEP_SPEED, spec.fps)
    manip_start = walk_frames + sweep_frames
    manip_frames = scripts["right"].positions.shape[0]
    total = manip_start + manip_frames + FINISH_HOLD
    if total < spec.min_duration:
        total = spec.min_duration
    tail = total - (manip_start + manip_frames)

    cameras = _camera_trajectory(spec, scene, total, walk_frames, sweep_frames)

    # Hand world streams: parked at rest before the manipulation begins.
    hand_world: dict[str, dict] = {}
    grasp_hand = {"reach": {}, "pick-place": {"right": 0}}.get(spec.task)
    if grasp_hand is None:
        grasp_hand = {"left": scene.item_ids[0], "right": scene.item_ids[1]}
    for side, script in scripts.items():
        positions = np.concatenate(
            [
                np.repeat(script.positions[:1], manip_start, axis=0),
                script.positions,
                np.repeat(script.positions[-1:], tail, axis=0),
            ]
        )
        aperture = np.concatenate(
            [
                np.repeat(script.aperture[:1], manip_start),
                script.aperture,
                np.repeat(script.aperture[-1:], tail),
            ]
        )
        hand_world[side] = {"pos": positions, "aperture": aperture, "rot": script.rotation}

    # Object pose streams: static until grasped, carried rigidly, static after.
    object_poses: dict[int, list[SE3]] = {}
    events: dict[int, dict] = {}
    for oid, obj in enumerate(scene.objects):
        poses = [obj.pose()] * total
        object_poses[oid] = poses
    for side, oid in grasp_hand.items():
        aperture = hand_world[side]["aperture"]
        local_events = _grasp_events(aperture)
        if not local_events:
            continue
        attach, release = local_events[0]
        hand_rot = hand_world[side]["rot"]
        hand_pos = hand_world[side]["pos"]
        obj_pose0 = scene.objects[oid].pose()
        hand_at_attach = SE3(hand_rot, hand_pos[attach])
        carry = hand_at_attach.inverse().compose(obj_pose0)
        poses = object_poses[oid]
        for t in range(attach, min(release, total)):
            poses[t] = SE3(hand_rot, hand_pos[t]).compose(carry)
        if release < total:
            for t in range(release, total):
                poses[t] = poses[release - 1] if release > 0 else obj_pose0
        events[oid] = {"hand": side, "attach": int(attach), "release": int(min(release, total))}

    # Ground-truth phases from the schedule.
    phases = np.empty(total, dtype=np.int64)
    phases[:walk_frames] = PhaseLabel.FORWARD
    phases[walk_frames:manip_start] = PhaseLabel.ROTATE
    moving_end = manip_start
    for side in scripts:
        pos = hand_world[side]["pos"]
        ap = hand_world[side]["aperture"]
        delta = np.linalg.norm(np.diff(pos, axis=0), axis=1) + np.abs(np.diff(ap))
        moved = np.flatnonzero(delta > 1e-12)
        if moved.size:
            moving_end = max(moving_end, int(moved[-1]) + 2)
    phases[manip_start:moving_end] = PhaseLabel.MANIP
    phases[moving_end:] = PhaseLabel.FINISHED

    # Object 2D tracks through the moving camera.
    tracks: dict[int, ObjectTracks] = {}
    keypoints0: dict[int, np.ndarray] = {}
    for oid, obj in enumerate(scene.objects):
        kp0 = object_ring(obj.position, obj.yaw, obj.radius, spec.track_points)
        keypoints0[oid] = kp0
        base_inv = obj.pose().inverse()
        pixels = np.zeros((total, spec.track_points, 2))
        visible = np.zeros((total, spec.track_points), dtype=bool)
        for t in range(total):
            pose_t = object_poses[oid][t]
            kp_world = pose_t.compose(base_inv).apply(kp0)
            p = projection_matrix(DEFAULT_INTRINSICS, cameras[t])
            hom = kp_world @ p[:, :3].T + p[:, 3]
            depth = hom[:, 2]
            ok = depth > 1e-6
            uv = np.zeros((spec.track_points, 2))
            uv[ok] = hom[ok, :2] / depth[ok, None]
            in_view = (
                ok
                & (uv[:, 0] >= 0.0)
                & (uv[:, 0] < DEFAULT_INTRINSICS.width)
                & (uv[:, 1] >= 0.0)
                & (uv[:, 1] < DEFAULT_INTRINSICS.height)
            )
            occluded = False
            centroid = pose_t.trans
            for side in scripts:
                if t >= manip_start and np.linalg.norm(hand_world[side]["pos"][t] - centroid) < OCCLUSION_RADIUS:
                    occluded = True
            pixels[t] = uv
            visible[t] = in_view & (not occluded)
        if spec.sigma_px > 0:
            pixels = pixels + rng.normal(0.0, spec.sigma_px, size=pixels.shape)
        tracks[oid] = ObjectTracks(pixels=pixels, visible=visible)

    # Hand streams with keypoint noise and confidence dropout.
    hands: dict[str, HandStream] = {}
    for side in ("left", "right"):
        stream = HandStream.empty(total)
        data = hand_world[side]
        kp = skeleton_sequence(data["pos"][manip_start:], data["rot"], data["aperture"][manip_start:])
        if spec.sigma_kp > 0:
            kp = kp + rng.normal(0.0, spec.sigma_kp, size=kp.shape)
        conf = 1.0 - 0.1 * rng.uniform(size=kp.shape[:2])
        if spec.conf_dropout > 0:
            drop = rng.uniform(size=conf.shape) < spec.conf_dropout
            conf = np.where(drop, rng.uniform(0.0, 0.79, size=conf.shape), conf)
        stream.present[manip_start:] = True
        stream.keypoints[manip_start:] = kp
        stream.confidence[manip_start:] = conf
        hands[side] = stream

    recording = Recording(
        intrinsics=DEFAULT_INTRINSICS,
        timestamps_ns=np.round(np.arange(total) * (1e9 / spec.fps)).astype(np.int64),
        camera_poses=cameras,
        left_hand=hands["left"],
        right_hand=hands["right"],
        tracks=tracks,
    )
    gt = GroundTruth(
        gripper_poses={
            side: [SE3(hand_world[side]["rot"], hand_world[side]["pos"][t]) for t in range(total)]
            for side in ("left", "right")
        },
        grasp={side: aperture_to_grasp(hand_world[side]["aperture"]) for side in ("left", "right")},
        object_poses=object_poses,
        object_keypoints=keypoints0,
        phases=phases,
        goals={
            "task": spec.task,
            "item_ids": list(scene.item_ids),
            "goal_positions": {int(k): v.tolist() for k, v in scene.goal_positions.items()},
            "goal_options": {k: v.tolist() for k, v in scene.goal_options.items()},
            "chosen_mode": scene.chosen_mode,
            "graspable": [o.graspable for o in scene.objects],
            "stand_position": scene.stand_position.tolist(),
            "scene_center": scene.scene_center.tolist(),
            "hand_rest": {k: v.tolist() for k, v in scene.hand_rest.items()},
            "events": events,
            "manip_start": int(manip_start),
        },
    )
    return recording, gt
