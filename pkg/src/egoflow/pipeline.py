"""Per-recording preprocessing: retarget, phase-select, triangulate, latch.

The output is a compact per-frame state table (hand poses/grasps, object
poses, reference frame, selected anchors) that the dataset builder turns
into training samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from egoflow.errors import AnchorUnavailable, EgoflowError, NoTriangulablePoints
from egoflow.ict import RefFrameMode
from egoflow.numerics.camera import Intrinsics
from egoflow.numerics.se3 import SE3
from egoflow.percept import (
    LatchEvent,
    detect_grasp_onset,
    detect_release,
    kinematic_latch,
    triangulate_object,
)
from egoflow.phase import PhaseConfig, classify_phases, head_speeds, select_training_frames
from egoflow.recording import GroundTruth, Recording
from egoflow.retarget import GripperTraj, RetargetConfig, retarget_trajectory


@dataclass
class HandTimeline:
    present: np.ndarray  # (T,) bool: retargeted data available
    poses: list  # (T,) SE3 | None
    grasp_bin: np.ndarray  # (T,) 0/1 aperture binarization (-1 where absent)


@dataclass
class PreprocessedRecording:
    rec_id: str
    intrinsics: Intrinsics
    dt: float
    num_frames: int
    ref_mode: str
    ref_pose: SE3
    camera_poses: list
    hands: dict[str, HandTimeline]
    object_poses: dict[int, list]  # oid -> per-frame SE3
    manip_object: int | None
    anchor_pose: SE3 | None
    phases: np.ndarray
    selected: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def action_pose(self, side: str, t: int) -> SE3:
        """Hand pose at frame t with backward fill over invalid frames."""
        timeline = self.hands[side]
        t = min(t, self.num_frames - 1)
        while t >= 0 and timeline.poses[t] is None:
            t -= 1
        if t < 0:
            return SE3.identity()
        return timeline.poses[t]

    def action_grasp(self, side: str, t: int) -> float:
        timeline = self.hands[side]
        t = min(t, self.num_frames - 1)
        while t >= 0 and (timeline.poses[t] is None):
            t -= 1
        if t < 0:
            return 1.0
        return float(timeline.grasp_bin[t])


def _expand_traj(traj: GripperTraj | None, total: int) -> HandTimeline:
    present = np.zeros(total, dtype=bool)
    poses: list = [None] * total
    grasp = np.full(total, -1.0)
    if traj is not None:
        for j, t in enumerate(traj.frames):
            present[t] = True
            poses[t] = traj.poses[j]
            grasp[t] = 1.0 if traj.grasp[j] >= 0.5 else 0.0
    return HandTimeline(present=present, poses=poses, grasp_bin=grasp)


def hand_speed_series(hands: dict[str, HandTimeline], dt: float, total: int) -> np.ndarray:
    """Max over hands of the retargeted gripper speed; absent hands count zero."""
    speed = np.zeros(total)
    for timeline in hands.values():
        pos = np.full((total, 3), np.nan)
        for t in range(total):
            if timeline.poses[t] is not None:
                pos[t] = timeline.poses[t].trans
        for t in range(1, total):
            if np.all(np.isfinite(pos[t])) and np.all(np.isfinite(pos[t - 1])):
                speed[t] = max(speed[t], np.linalg.norm(pos[t] - pos[t - 1]) / dt)
    return speed


def preprocess_recording(
    rec: Recording,
    rec_id: str = "rec",
    ref_mode: RefFrameMode = RefFrameMode.CAMERA,
    retarget_cfg: RetargetConfig | None = None,
    phase_cfg: PhaseConfig | None = None,
    orientations: dict[int, np.ndarray] | None = None,
) -> PreprocessedRecording:
    """Run the full perception stack on one recording.

    orientations maps object id to a rotation matrix (the orientation
    provider output); identity when not supplied.
    """
    retarget_cfg = retarget_cfg or RetargetConfig()
    phase_cfg = phase_cfg or PhaseConfig()
    total = rec.num_frames
    diagnostics: dict = {"frames": total}

    hands: dict[str, HandTimeline] = {}
    for side, stream in (("left", rec.left_hand), ("right", rec.right_hand)):
        if not stream.present.any():
            hands[side] = _expand_traj(None, total)
            diagnostics[f"{side}_retargeted"] = 0
            continue
        try:
            traj = retarget_trajectory(stream, retarget_cfg)
        except EgoflowError as err:
            diagnostics[f"{side}_error"] = str(err)
            traj = None
        hands[side] = _expand_traj(traj, total)
        diagnostics[f"{side}_retargeted"] = int(hands[side].present.sum())

    lin, ang = head_speeds(rec.camera_poses, rec.dt)
    hand_speed = hand_speed_series(hands, rec.dt, total)
    phases = classify_phases(lin, ang, hand_speed, phase_cfg)
    selected = select_training_frames(phases)
    # Anchors need hand data; keep frames where every in-recording hand survived.
    needed = [side for side, stream in (("left", rec.left_hand), ("right", rec.right_hand)) if stream.present.any()]
    if needed:
        valid = np.all(np.stack([hands[s].present for s in needed]), axis=0)
        selected = selected[valid[selected]]
    diagnostics["selected"] = int(selected.size)
    diagnostics["dropped_by_phase"] = int(total - select_training_frames(phases).size)
    diagnostics["dropped_by_masking"] = int(select_training_frames(phases).size - selected.size)

    # Static objects from the pre-manipulation window (walk + sweep).
    first_manip = int(selected[0]) if selected.size else total
    window = slice(0, max(first_manip, 2))
    object_static: dict[int, SE3] = {}
    tri_residuals = {}
    for oid, tracks in rec.tracks.items():
        provider = (lambda o: (lambda: orientations.get(o, np.eye(3))))(oid) if orientations else (lambda: np.eye(3))
        try:
            est = triangulate_object(tracks, rec.intrinsics, rec.camera_poses, provider, frame_slice=window)
        except (NoTriangulablePoints, EgoflowError) as err:
            diagnostics[f"object{oid}_error"] = str(err)
            continue
        object_static[oid] = SE3(est.orientation, est.centroid)
        tri_residuals[oid] = est.residual
    diagnostics["triangulation_residuals"] = tri_residuals

    # Latch scan: objects follow the grasping hand between onset and release.
    # Events are consumed in time order with per-hand exclusivity: a hand
    # already carrying an object cannot latch a second one that merely
    # passes within the onset distance (e.g. the goal plate at place time).
    object_poses = {oid: [pose] * total for oid, pose in object_static.items()}
    manip_object = None
    anchor_pose = None
    first_onset = None
    scan_start = {oid: 0 for oid in object_static}
    busy: dict[str, list[tuple[int, int]]] = {"left": [], "right": []}

    def busy_interval(side: str, frame: int):
        for interval in busy[side]:
            if interval[0] <= frame < interval[1]:
                return interval
        return None

    while True:
        candidates = []
        for oid in object_static:
            cursor = scan_start[oid]
            if cursor >= total:
                continue
            poses = object_poses[oid]
            for side in ("left", "right"):
                timeline = hands[side]
                frames = np.flatnonzero(timeline.present)
                if frames.size == 0:
                    continue
                traj_poses = [timeline.poses[t] for t in frames]
                grasp = np.where(timeline.grasp_bin[frames] > 0.5, 1.0, 0.0)
                cand = detect_grasp_onset(
                    frames,
                    traj_poses,
                    grasp,
                    poses[min(cursor, total - 1)].trans,
                    object_pose=poses[min(cursor, total - 1)],
                    hand=side,
                    start_at=cursor,
                )
                if cand is not None:
                    candidates.append((cand.onset, oid, cand))
        if not candidates:
            break
        candidates.sort(key=lambda c: (c[0], c[1]))
        onset, oid, event = candidates[0]
        held = busy_interval(event.hand, onset)
        if held is not None:
            scan_start[oid] = held[1]
            continue
        if first_onset is None or onset < first_onset:
            first_onset = onset
            manip_object = oid
            anchor_pose = object_poses[oid][onset]
        timeline = hands[event.hand]
        frames = np.flatnonzero(timeline.present)
        grasp = np.where(timeline.grasp_bin[frames] > 0.5, 1.0, 0.0)
        release = detect_release(frames, grasp, after=onset)
        stop = release if release is not None else total
        poses = object_poses[oid]
        latch_frames = [t for t in range(onset, stop) if timeline.poses[t] is not None]
        latched = kinematic_latch([timeline.poses[t] for t in latch_frames], event)
        for t, pose in zip(latch_frames, latched):
            poses[t] = pose
        for t in range(onset, stop):
            if poses[t] is None:
                poses[t] = poses[t - 1]
        busy[event.hand].append((onset, stop))
        if release is not None:
            last = poses[stop - 1]
            for t in range(stop, total):
                poses[t] = last
        scan_start[oid] = stop
    diagnostics["manip_object"] = manip_object

    if ref_mode is RefFrameMode.ANCHOR:
        if anchor_pose is None:
            raise AnchorUnavailable(f"{rec_id}: no grasp onset for anchor mode")
        ref_pose = anchor_pose
    else:
        ref_idx = int(selected[0]) if selected.size else 0
        ref_pose = rec.camera_poses[ref_idx]

    return PreprocessedRecording(
        rec_id=rec_id,
        intrinsics=rec.intrinsics,
        dt=rec.dt,
        num_frames=total,
        ref_mode=ref_mode.value,
        ref_pose=ref_pose,
        camera_poses=rec.camera_poses,
        hands=hands,
        object_poses=object_poses,
        manip_object=manip_object,
        anchor_pose=anchor_pose,
        phases=phases,
        selected=selected,
        diagnostics=diagnostics,
    )


def fit_corpus_stats(recs: list[PreprocessedRecording]):
    """Translation stats over reference-frame entity positions at selected frames."""
    from egoflow.ict import fit_norm_stats

    translations = []
    for rec in recs:
        ref_inv = rec.ref_pose.inverse()
        for t in rec.selected:
            for side in ("left", "right"):
                pose = rec.hands[side].poses[t]
                if pose is not None:
                    translations.append(ref_inv.compose(pose).trans)
            for poses in rec.object_poses.values():
                translations.append(ref_inv.compose(poses[t]).trans)
    return fit_norm_stats(np.array(translations))
