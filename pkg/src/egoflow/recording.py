"""In-memory containers for an egocentric session and its ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from egoflow.numerics.camera import Intrinsics
from egoflow.numerics.se3 import SE3

NUM_HAND_KEYPOINTS = 21

# Canonical keypoint ordering: 0 wrist; 1-4 thumb (CMC, MCP, IP, tip);
# 5-8 index (MCP, PIP, DIP, tip); 9-20 remaining fingers.
WRIST = 0
THUMB_MCP = 2
THUMB_TIP = 4
INDEX_MCP = 5
INDEX_TIP = 8
RETARGET_KEYPOINTS = (WRIST, THUMB_MCP, THUMB_TIP, INDEX_MCP, INDEX_TIP)


@dataclass
class HandStream:
    """Per-frame 21-keypoint hand with confidences; absent frames flagged."""

    present: np.ndarray  # (T,) bool
    keypoints: np.ndarray  # (T, 21, 3) meters, world frame
    confidence: np.ndarray  # (T, 21) in [0, 1]

    def __len__(self) -> int:
        return self.present.shape[0]

    @staticmethod
    def empty(num_frames: int) -> "HandStream":
        return HandStream(
            present=np.zeros(num_frames, dtype=bool),
            keypoints=np.zeros((num_frames, NUM_HAND_KEYPOINTS, 3)),
            confidence=np.zeros((num_frames, NUM_HAND_KEYPOINTS)),
        )


@dataclass
class ObjectTracks:
    """2D keypoint tracks of one object: constant point count across frames."""

    pixels: np.ndarray  # (T, N, 2)
    visible: np.ndarray  # (T, N) bool


@dataclass
class Recording:
    """A timestamped egocentric session."""

    intrinsics: Intrinsics
    timestamps_ns: np.ndarray  # (T,) strictly increasing
    camera_poses: list[SE3]  # camera-to-world, length T
    left_hand: HandStream
    right_hand: HandStream
    tracks: dict[int, ObjectTracks]  # object id -> tracks

    def __post_init__(self):
        t = np.asarray(self.timestamps_ns)
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("timestamps must be strictly increasing")

    @property
    def num_frames(self) -> int:
        return int(self.timestamps_ns.shape[0])

    @property
    def dt(self) -> float:
        if self.num_frames < 2:
            return 1.0 / 30.0
        return float(np.mean(np.diff(self.timestamps_ns)) * 1e-9)


@dataclass
class GroundTruth:
    """Oracle sidecar emitted by the synthetic generator."""

    gripper_poses: dict[str, list[SE3]]  # "left"/"right" -> per-frame pose
    grasp: dict[str, np.ndarray]  # "left"/"right" -> (T,) scalar in [0, 1]
    object_poses: dict[int, list[SE3]]  # object id -> per-frame pose
    object_keypoints: dict[int, np.ndarray]  # object id -> (N, 3) initial 3D points
    phases: np.ndarray  # (T,) PhaseLabel values
    goals: dict = field(default_factory=dict)  # task goal positions etc.
