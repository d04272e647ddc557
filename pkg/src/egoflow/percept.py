"""Static-object recovery from 2D tracks and occlusion handling.

Triangulation solves the stacked DLT system with an SVD; during grasps the
object pose is propagated rigidly from the grasping hand (kinematic
latching) because the hand occludes the tracks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from egoflow.errors import BehindCamera, InsufficientBaseline, NoTriangulablePoints
from egoflow.numerics.camera import Intrinsics, project, projection_matrix
from egoflow.numerics.se3 import SE3
from egoflow.recording import ObjectTracks

# Reprojection residual beyond which a triangulated point is an outlier.
RESIDUAL_ACCEPT_PX = 2.0
# Ratio of the two smallest singular values flagging a near-rank-deficient system.
RANK_RATIO_MAX = 0.9


@dataclass
class ObjectEstimate:
    centroid: np.ndarray  # (3,) meters, world
    points: np.ndarray  # (M, 3) accepted per-point estimates
    used: np.ndarray  # (N,) bool, which tracks contributed
    orientation: np.ndarray  # 3x3 from the orientation provider
    residual: float  # mean reprojection error over accepted points, px


@dataclass(frozen=True)
class LatchEvent:
    onset: int  # frame t0
    hand: str  # "left" | "right"
    hand_pose: SE3  # T_hand at t0
    object_pose: SE3  # T_obj at t0


def triangulate_point(
    pixels: np.ndarray,
    visible: np.ndarray,
    k: Intrinsics,
    poses: list[SE3],
) -> tuple[np.ndarray, float]:
    """DLT triangulation of one track across its visible frames.

    Stacks two linear equations per visible frame into A X = 0 and takes
    the right singular vector with the smallest singular value. Raises
    InsufficientBaseline on under-constrained or near-rank-deficient
    systems, BehindCamera when the solution has non-positive depth in a
    contributing view.
    """
    visible = np.asarray(visible, dtype=bool)
    idx = np.flatnonzero(visible)
    if idx.size < 2:
        raise InsufficientBaseline(f"only {idx.size} visible frame(s)")
    rows = []
    for i in idx:
        p = projection_matrix(k, poses[i])
        u, v = pixels[i]
        rows.append(u * p[2] - p[0])
        rows.append(v * p[2] - p[1])
    a0 = np.stack(rows)
    a = a0 / np.linalg.norm(a0, axis=1, keepdims=True)
    _, s, vt = np.linalg.svd(a)
    if s[-2] <= 0.0 or not np.isfinite(s[-1] / s[-2]) or s[-1] / s[-2] > RANK_RATIO_MAX:
        raise InsufficientBaseline(
            f"near-rank-deficient system (singular value ratio {s[-1]:.2e}/{s[-2]:.2e})"
        )
    hom = vt[-1]
    if abs(hom[3]) < 1e-12 * np.linalg.norm(hom):
        raise InsufficientBaseline("solution at infinity")
    # Iteratively reweight rows by the projective depth so the algebraic
    # residual approximates the pixel reprojection error.
    p3 = np.stack([projection_matrix(k, poses[i])[2] for i in idx])
    for _ in range(2):
        depths = p3 @ hom
        if np.any(np.abs(depths) < 1e-12):
            break
        weights = np.repeat(1.0 / np.abs(depths), 2)
        aw = a0 * weights[:, None]
        _, _, vtw = np.linalg.svd(aw)
        hom = vtw[-1]
    point = hom[:3] / hom[3]

    errors = []
    for i in idx:
        depth = poses[i].inverse().apply(point)[2]
        if depth <= 0.0:
            raise BehindCamera(f"non-positive depth {depth:.3e} in frame {i}")
        errors.append(np.linalg.norm(project(k, poses[i], point) - pixels[i]))
    return point, float(np.mean(errors))


def triangulate_object(
    tracks: ObjectTracks,
    k: Intrinsics,
    poses: list[SE3],
    orientation_provider,
    frame_slice: slice | None = None,
) -> ObjectEstimate:
    """Centroid of the triangulable track points, outliers excluded.

    orientation_provider is a zero-argument callable returning the object
    rotation (ground truth in synthetic mode, stored value in file mode).
    frame_slice restricts triangulation to a window where the object is
    known static (the pre-episode sweep).
    """
    window = frame_slice or slice(None)
    pixels = tracks.pixels[window]
    visible = tracks.visible[window]
    cams = poses[window]
    n_tracks = pixels.shape[1]
    points = []
    used = np.zeros(n_tracks, dtype=bool)
    residuals = []
    for n in range(n_tracks):
        try:
            point, residual = triangulate_point(pixels[:, n], visible[:, n], k, cams)
        except (InsufficientBaseline, BehindCamera):
            continue
        if residual > RESIDUAL_ACCEPT_PX:
            continue
        points.append(point)
        residuals.append(residual)
        used[n] = True
    if not points:
        raise NoTriangulablePoints("every track failed triangulation or residual gate")
    points = np.stack(points)
    return ObjectEstimate(
        centroid=points.mean(axis=0),
        points=points,
        used=used,
        orientation=np.asarray(orientation_provider(), dtype=float),
        residual=float(np.mean(residuals)),
    )


def detect_grasp_onset(
    frames: np.ndarray,
    poses: list[SE3],
    grasp: np.ndarray,
    centroid: np.ndarray,
    object_pose: SE3 | None = None,
    hand: str = "right",
    close_threshold: float = 0.5,
    hold: int = 3,
    max_distance: float = 0.05,
    start_at: int = 0,
) -> LatchEvent | None:
    """First frame where the grasp closes (held) near the object centroid.

    object_pose is the object's static pose at onset (orientation from the
    provider, translation from triangulation); defaults to the centroid
    with identity orientation.
    """
    closed = np.asarray(grasp) < close_threshold
    if object_pose is None:
        object_pose = SE3(np.eye(3), np.asarray(centroid, dtype=float))
    for j in range(len(frames) - hold + 1):
        if frames[j] < start_at:
            continue
        if not closed[j : j + hold].all():
            continue
        if np.linalg.norm(poses[j].trans - centroid) >= max_distance:
            continue
        return LatchEvent(onset=int(frames[j]), hand=hand, hand_pose=poses[j], object_pose=object_pose)
    return None


def kinematic_latch(hand_poses: list[SE3], event: LatchEvent) -> list[SE3]:
    """Object poses for t >= t0: T_obj(t) = T_hand(t) T_hand(t0)^-1 T_obj(t0)."""
    carry = event.hand_pose.inverse().compose(event.object_pose)
    return [pose.compose(carry) for pose in hand_poses]


def detect_release(
    frames: np.ndarray,
    grasp: np.ndarray,
    after: int,
    open_threshold: float = 0.5,
    hold: int = 3,
) -> int | None:
    """First frame after `after` where the grasp opens and holds open."""
    opened = np.asarray(grasp) >= open_threshold
    for j in range(len(frames) - hold + 1):
        if frames[j] <= after:
            continue
        if opened[j : j + hold].all():
            return int(frames[j])
    return None
