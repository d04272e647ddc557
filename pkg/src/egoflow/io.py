"""On-disk formats: recording bundles, preprocessed datasets, run configs.

Everything except checkpoints is JSON/JSONL: human-inspectable and
line-streamable. A recording bundle is a directory with intrinsics.json,
frames.jsonl, and an optional gt.jsonl oracle sidecar.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from egoflow.ict import NormStats
from egoflow.numerics.camera import Intrinsics
from egoflow.numerics.rotation import quat_from_rotmat, quat_to_rotmat
from egoflow.numerics.se3 import SE3
from egoflow.pipeline import HandTimeline, PreprocessedRecording
from egoflow.recording import GroundTruth, HandStream, ObjectTracks, Recording


def pose_to_row(pose: SE3) -> list[float]:
    """[qw, qx, qy, qz, tx, ty, tz]"""
    q = quat_from_rotmat(pose.rot)
    return [*q.tolist(), *pose.trans.tolist()]


def pose_from_row(row) -> SE3:
    q = np.asarray(row[:4], dtype=float)
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"quaternion norm {norm} outside tolerance")
    return SE3(quat_to_rotmat(q / norm), np.asarray(row[4:7], dtype=float))


def write_bundle(path, rec: Recording, gt: GroundTruth | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    k = rec.intrinsics
    (path / "intrinsics.json").write_text(
        json.dumps(
            {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height},
            sort_keys=True,
        )
    )
    with open(path / "frames.jsonl", "w") as f:
        for t in range(rec.num_frames):
            row = {
                "t_ns": int(rec.timestamps_ns[t]),
                "cam": pose_to_row(rec.camera_poses[t]),
                "tracks": {
                    str(oid): [
                        [float(tr.pixels[t, n, 0]), float(tr.pixels[t, n, 1]), bool(tr.visible[t, n])]
                        for n in range(tr.pixels.shape[1])
                    ]
                    for oid, tr in sorted(rec.tracks.items())
                },
            }
            for key, stream in (("left", rec.left_hand), ("right", rec.right_hand)):
                if stream.present[t]:
                    row[key] = np.concatenate(
                        [stream.keypoints[t], stream.confidence[t][:, None]], axis=1
                    ).tolist()
                else:
                    row[key] = None
            f.write(json.dumps(row) + "\n")
    if gt is not None:
        meta = {
            "object_keypoints": {str(k_): v.tolist() for k_, v in gt.object_keypoints.items()},
            "goals": gt.goals,
        }
        with open(path / "gt.jsonl", "w") as f:
            f.write(json.dumps({"meta": meta}) + "\n")
            for t in range(rec.num_frames):
                f.write(
                    json.dumps(
                        {
                            "phase": int(gt.phases[t]),
                            "lh": pose_to_row(gt.gripper_poses["left"][t]),
                            "rh": pose_to_row(gt.gripper_poses["right"][t]),
                            "g": [float(gt.grasp["left"][t]), float(gt.grasp["right"][t])],
                            "objects": {str(oid): pose_to_row(poses[t]) for oid, poses in sorted(gt.object_poses.items())},
                        }
                    )
                    + "\n"
                )


def read_bundle(path) -> tuple[Recording, GroundTruth | None]:
    path = Path(path)
    kd = json.loads((path / "intrinsics.json").read_text())
    intr = Intrinsics(**kd)
    timestamps = []
    cams = []
    lefts = []
    rights = []
    track_rows: dict[int, list] = {}
    with open(path / "frames.jsonl") as f:
        for line in f:
            row = json.loads(line)
            timestamps.append(row["t_ns"])
            cams.append(pose_from_row(row["cam"]))
            lefts.append(row["left"])
            rights.append(row["right"])
            for oid, pts in row["tracks"].items():
                track_rows.setdefault(int(oid), []).append(pts)
    total = len(timestamps)

    def to_stream(rows) -> HandStream:
        stream = HandStream.empty(total)
        for t, entry in enumerate(rows):
            if entry is None:
                continue
            arr = np.asarray(entry, dtype=float)
            if arr.shape != (21, 4):
                raise ValueError(f"hand entry must be 21x4, got {arr.shape}")
            stream.present[t] = True
            stream.keypoints[t] = arr[:, :3]
            stream.confidence[t] = arr[:, 3]
        return stream

    tracks = {}
    for oid, rows in track_rows.items():
        if len(rows) != total:
            raise ValueError(f"object {oid} track count varies across frames")
        arr = np.asarray(rows, dtype=float)
        tracks[oid] = ObjectTracks(pixels=arr[:, :, :2], visible=arr[:, :, 2] > 0.5)

    rec = Recording(
        intrinsics=intr,
        timestamps_ns=np.asarray(timestamps, dtype=np.int64),
        camera_poses=cams,
        left_hand=to_stream(lefts),
        right_hand=to_stream(rights),
        tracks=tracks,
    )

    gt = None
    gt_path = path / "gt.jsonl"
    if gt_path.exists():
        with open(gt_path) as f:
            header = json.loads(f.readline())["meta"]
            phases = []
            lh = []
            rh = []
            grasp = []
            obj_rows: dict[int, list] = {}
            for line in f:
                row = json.loads(line)
                phases.append(row["phase"])
                lh.append(pose_from_row(row["lh"]))
                rh.append(pose_from_row(row["rh"]))
                grasp.append(row["g"])
                for oid, pr in row["objects"].items():
                    obj_rows.setdefault(int(oid), []).append(pose_from_row(pr))
        if len(phases) != total:
            raise ValueError("gt line count does not match frames")
        grasp = np.asarray(grasp, dtype=float)
        gt = GroundTruth(
            gripper_poses={"left": lh, "right": rh},
            grasp={"left": grasp[:, 0], "right": grasp[:, 1]},
            object_poses=obj_rows,
            object_keypoints={int(k_): np.asarray(v) for k_, v in header["object_keypoints"].items()},
            phases=np.asarray(phases, dtype=np.int64),
            goals=header["goals"],
        )
    return rec, gt


def write_dataset(path, recs: list[PreprocessedRecording], stats: NormStats, meta: dict) -> None:
    """Preprocessed corpus: header line (stats, meta, diagnostics) then one
    line per recording with its per-frame state table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": "egoflow-dataset-v1",
        "norm_stats": stats.to_dict(),
        "meta": meta,
        "diagnostics": {rec.rec_id: _json_safe(rec.diagnostics) for rec in recs},
    }
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in recs:
            cam_idx = int(rec.selected[0]) if rec.selected.size else 0
            k = rec.intrinsics
            row = {
                "rec_id": rec.rec_id,
                "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height},
                "dt": rec.dt,
                "num_frames": rec.num_frames,
                "ref_mode": rec.ref_mode,
                "ref_pose": pose_to_row(rec.ref_pose),
                "trace_camera": pose_to_row(rec.camera_poses[cam_idx]),
                "manip_object": rec.manip_object,
                "anchor_pose": pose_to_row(rec.anchor_pose) if rec.anchor_pose is not None else None,
                "phases": rec.phases.tolist(),
                "selected": rec.selected.tolist(),
                "hands": {
                    side: {
                        "poses": [None if p is None else pose_to_row(p) for p in timeline.poses],
                        "grasp_bin": timeline.grasp_bin.tolist(),
                    }
                    for side, timeline in rec.hands.items()
                },
                "objects": {str(oid): [pose_to_row(p) for p in poses] for oid, poses in sorted(rec.object_poses.items())},
            }
            f.write(json.dumps(row) + "\n")


def read_dataset(path) -> tuple[list[PreprocessedRecording], NormStats, dict]:
    path = Path(path)
    recs = []
    with open(path) as f:
        header = json.loads(f.readline())
        stats = NormStats.from_dict(header["norm_stats"])
        for line in f:
            row = json.loads(line)
            total = row["num_frames"]
            hands = {}
            for side, data in row["hands"].items():
                poses = [None if p is None else pose_from_row(p) for p in data["poses"]]
                grasp = np.asarray(data["grasp_bin"], dtype=float)
                hands[side] = HandTimeline(
                    present=np.array([p is not None for p in poses]),
                    poses=poses,
                    grasp_bin=grasp,
                )
            trace_cam = pose_from_row(row["trace_camera"])
            recs.append(
                PreprocessedRecording(
                    rec_id=row["rec_id"],
                    intrinsics=Intrinsics(**row["intrinsics"]),
                    dt=row["dt"],
                    num_frames=total,
                    ref_mode=row["ref_mode"],
                    ref_pose=pose_from_row(row["ref_pose"]),
                    camera_poses=[trace_cam] * total,
                    hands=hands,
                    object_poses={int(oid): [pose_from_row(p) for p in poses] for oid, poses in row["objects"].items()},
                    manip_object=row["manip_object"],
                    anchor_pose=pose_from_row(row["anchor_pose"]) if row["anchor_pose"] else None,
                    phases=np.asarray(row["phases"], dtype=np.int64),
                    selected=np.asarray(row["selected"], dtype=np.int64),
                    diagnostics=header["diagnostics"].get(row["rec_id"], {}),
                )
            )
    return recs, stats, header["meta"]


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


# Known configuration groups and their keys; unknown keys are rejected.
CONFIG_SCHEMA = {
    "synth": {
        "task", "object_radius", "workspace_x", "workspace_y", "offset_range",
        "sigma_px", "sigma_kp", "conf_dropout", "min_duration", "seed",
        "dual_goal", "fps", "track_points",
    },
    "retarget": {
        "confidence_threshold", "min_segment", "max_gap", "sg_window", "sg_order",
        "ema_alpha", "d_min", "d_max", "grasp_median_window", "flicker_min_run",
    },
    "phase": {
        "v_stop", "w_stop", "stop_hold", "w_rot", "v_rot_max", "transition_buffer",
        "hand_demote_speed", "hand_window", "finished_hold",
    },
    "ict": {"ref_mode"},
    "policy": {
        "base_lr", "warmup_steps", "min_lr_ratio", "batch_size", "epochs", "max_steps",
        "grad_clip", "weight_decay", "ema_decay", "state_noise", "ot_cfm", "seed",
        "val_fraction", "val_every", "log_every", "arch", "ctx_dim", "hidden",
        "use_raster", "lambda_om", "lambda_2d", "lambda_lc", "w_p", "w_r", "w_g",
        "w_f", "w_c", "substep_prob", "sigma_pos", "sigma_rot_deg", "augment_enabled",
        "stride",
    },
    "control": {
        "euler_steps", "control_hz", "step_stride", "look_ahead", "grasp_threshold",
        "grasp_latch", "pos_ema_alpha", "overlap_blend", "cage_pos", "cage_rot",
        "max_cycles", "redraw_noise", "seed",
    },
}


def validate_config(config: dict) -> dict:
    """Reject unknown groups/keys; returns the config unchanged."""
    for group, values in config.items():
        if group not in CONFIG_SCHEMA:
            raise ValueError(f"unknown config group {group!r}")
        if not isinstance(values, dict):
            raise ValueError(f"config group {group!r} must be an object")
        unknown = set(values) - CONFIG_SCHEMA[group]
        if unknown:
            raise ValueError(f"unknown keys in {group!r}: {sorted(unknown)}")
    return config


def load_config(path) -> dict:
    config = json.loads(Path(path).read_text())
    return validate_config(config)
