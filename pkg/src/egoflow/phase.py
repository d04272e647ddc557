"""Kinematic phase segmentation and training-frame selection.

A recording is split into five modes from two signals: the head (camera)
linear/angular speeds and the retargeted hand speed. Only Manip and
Finished frames feed the training set.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from egoflow.errors import TooShort
from egoflow.numerics.rotation import rotation_angle


class PhaseLabel(enum.IntEnum):
    MANIP = 0
    FORWARD = 1
    ROTATE = 2
    TRANSITION = 3
    FINISHED = 4


@dataclass(frozen=True)
class PhaseConfig:
    v_stop: float = 0.03  # m/s
    w_stop: float = 0.15  # rad/s
    stop_hold: int = 15  # frames
    w_rot: float = 0.10  # rad/s
    v_rot_max: float = 0.08  # m/s
    transition_buffer: int = 10  # frames inserted around every mode change
    hand_demote_speed: float = 0.15  # m/s
    hand_window: int = 5  # frames
    finished_hold: int = 30  # frames


def head_speeds(camera_traj, dt: float):
    """Per-frame linear (m/s) and angular (rad/s) head speeds.

    Central differences on interior frames, one-sided at the endpoints.
    camera_traj is a sequence of SE3 camera-to-world poses.
    """
    n = len(camera_traj)
    if n < 2:
        raise TooShort("need at least 2 frames for speeds")
    pos = np.stack([p.trans for p in camera_traj])
    lin = np.empty(n)
    ang = np.empty(n)
    for t in range(n):
        lo = max(t - 1, 0)
        hi = min(t + 1, n - 1)
        span = (hi - lo) * dt
        lin[t] = np.linalg.norm(pos[hi] - pos[lo]) / span
        ang[t] = rotation_angle(camera_traj[lo].rot.T @ camera_traj[hi].rot) / span
    return lin, ang


def _runs_of(mask: np.ndarray):
    runs = []
    start = None
    for i, v in enumerate(mask):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(mask)))
    return runs


def _mean_window(series: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    padded = np.pad(series, half, mode="edge")
    kernel = np.ones(window) / window
    return np.convolve(padded, kernel, mode="valid")


def core_labels(head_lin, head_ang, hand_speed, cfg: PhaseConfig) -> np.ndarray:
    """Priority classification (Finished > Manip > Rotate > Forward), no buffers."""
    head_lin = np.asarray(head_lin, dtype=float)
    head_ang = np.asarray(head_ang, dtype=float)
    hand_speed = np.asarray(hand_speed, dtype=float)
    n = head_lin.shape[0]
    labels = np.full(n, PhaseLabel.FORWARD, dtype=np.int64)

    rotate = (head_ang > cfg.w_rot) & (head_lin < cfg.v_rot_max)
    labels[rotate] = PhaseLabel.ROTATE

    stopped = (head_lin < cfg.v_stop) & (head_ang < cfg.w_stop)
    for start, stop in _runs_of(stopped):
        if stop - start >= cfg.stop_hold:
            labels[start:stop] = PhaseLabel.MANIP

    # Finished: the trailing run where the head is stopped and the hands are
    # quiescent (their windowed mean speed also under v_stop).
    hand_mean = _mean_window(hand_speed, cfg.hand_window)
    resting = stopped & (hand_mean < cfg.v_stop)
    tail = n
    while tail > 0 and resting[tail - 1]:
        tail -= 1
    if n - tail >= cfg.finished_hold:
        labels[tail:] = PhaseLabel.FINISHED
    return labels


def classify_phases(head_lin, head_ang, hand_speed, cfg: PhaseConfig | None = None) -> np.ndarray:
    """Full phase labeling: core priority, transition buffers, hand demotion."""
    cfg = cfg or PhaseConfig()
    labels = core_labels(head_lin, head_ang, hand_speed, cfg)
    n = labels.shape[0]

    half = cfg.transition_buffer // 2
    changes = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    for c in changes:
        labels[max(c - half, 0) : min(c + half, n)] = PhaseLabel.TRANSITION

    hand_mean = _mean_window(np.asarray(hand_speed, dtype=float), cfg.hand_window)
    demote = (labels == PhaseLabel.MANIP) & (hand_mean > cfg.hand_demote_speed)
    labels[demote] = PhaseLabel.TRANSITION
    return labels


def select_training_frames(labels: np.ndarray) -> np.ndarray:
    """Indices of Manip and Finished frames, order preserved."""
    labels = np.asarray(labels)
    return np.flatnonzero((labels == PhaseLabel.MANIP) | (labels == PhaseLabel.FINISHED))
