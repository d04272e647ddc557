"""Hand-to-gripper retargeting: 21-keypoint streams to SE(3) + grasp scalar.

Pipeline order: confidence masking, gap interpolation, Savitzky-Golay on
the five retarget keypoints, per-frame frame construction, axis EMA,
grasp computation, median + flicker cleanup on the grasp scalar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from egoflow.errors import EmptyAfterMasking
from egoflow.numerics.filters import (
    ema_axes,
    interpolate_gaps,
    median_filter,
    savitzky_golay,
)
from egoflow.numerics.se3 import SE3
from egoflow.numerics.rotation import gram_schmidt_frame
from egoflow.recording import (
    INDEX_MCP,
    INDEX_TIP,
    RETARGET_KEYPOINTS,
    THUMB_MCP,
    THUMB_TIP,
    WRIST,
    HandStream,
)


@dataclass(frozen=True)
class RetargetConfig:
    confidence_threshold: float = 0.8
    min_segment: int = 30  # frames; shorter detection segments are ghosts
    max_gap: int = 10  # frames
    sg_window: int = 21
    sg_order: int = 2
    ema_alpha: float = 0.15
    d_min: float = 0.02  # meters, closed fingertip distance
    d_max: float = 0.10  # meters, fully open fingertip distance
    grasp_median_window: int = 5
    flicker_min_run: int = 5


@dataclass
class GripperTraj:
    """Retargeted virtual gripper, aligned to surviving recording frames."""

    frames: np.ndarray  # (S,) indices into the recording
    poses: list[SE3]  # length S, world frame
    grasp: np.ndarray  # (S,) in [0, 1]

    def __len__(self) -> int:
        return self.frames.shape[0]


def mask_low_confidence(hand: HandStream, cfg: RetargetConfig) -> np.ndarray:
    """Per-keypoint validity after thresholding and ghost-segment removal.

    A keypoint survives when its confidence reaches the threshold; whole
    detection segments (contiguous present runs) shorter than min_segment
    are dropped outright.
    """
    valid = hand.present[:, None] & (hand.confidence >= cfg.confidence_threshold)
    start = None
    n = len(hand)
    for i in range(n + 1):
        present = i < n and hand.present[i]
        if present and start is None:
            start = i
        elif not present and start is not None:
            if i - start < cfg.min_segment:
                valid[start:i] = False
            start = None
    return valid


def extract_ee_pose(wrist, thumb_mcp, thumb_tip, index_mcp, index_tip) -> SE3:
    """Gripper pose from five keypoints.

    Translation is the fingertip midpoint; the rotation frame comes from
    the MCP joints (jaw axis thumb MCP -> index MCP, forward axis wrist ->
    MCP midpoint), which stay separated even at full pinch.
    """
    wrist = np.asarray(wrist, dtype=float)
    thumb_mcp = np.asarray(thumb_mcp, dtype=float)
    thumb_tip = np.asarray(thumb_tip, dtype=float)
    index_mcp = np.asarray(index_mcp, dtype=float)
    index_tip = np.asarray(index_tip, dtype=float)
    translation = 0.5 * (thumb_tip + index_tip)
    rot = gram_schmidt_frame(index_mcp - thumb_mcp, 0.5 * (thumb_mcp + index_mcp) - wrist)
    return SE3(rot, translation)


def compute_grasp(thumb_tip, index_tip, cfg: RetargetConfig) -> float:
    """Normalized fingertip distance, clipped to [0, 1]."""
    dist = float(np.linalg.norm(np.asarray(thumb_tip) - np.asarray(index_tip)))
    return float(np.clip((dist - cfg.d_min) / (cfg.d_max - cfg.d_min), 0.0, 1.0))


def _clean_grasp(g: np.ndarray, cfg: RetargetConfig) -> np.ndarray:
    """Median filter then overwrite too-short open/close runs.

    Binarization downstream is a pure threshold, so flicker suppression is
    applied to g itself: any run of the thresholded signal shorter than
    flicker_min_run is replaced with the preceding run's values.
    """
    if g.shape[0] >= cfg.grasp_median_window:
        g = median_filter(g, cfg.grasp_median_window)
    else:
        g = g.copy()
    closed = g < 0.5
    runs = []
    start = 0
    for i in range(1, len(closed) + 1):
        if i == len(closed) or closed[i] != closed[start]:
            runs.append((start, i))
            start = i
    for idx, (start, stop) in enumerate(runs):
        if stop - start >= cfg.flicker_min_run or len(runs) == 1:
            continue
        src = runs[idx - 1] if idx > 0 else runs[idx + 1]
        fill_value = g[src[1] - 1] if idx > 0 else g[src[0]]
        g[start:stop] = fill_value
        closed[start:stop] = fill_value < 0.5
    return np.clip(g, 0.0, 1.0)


def retarget_trajectory(hand: HandStream, cfg: RetargetConfig | None = None) -> GripperTraj:
    """Full retargeting pipeline for one hand."""
    cfg = cfg or RetargetConfig()
    n = len(hand)
    valid = mask_low_confidence(hand, cfg)

    # Gap-fill each retarget keypoint independently, then keep frames where
    # all five are available.
    filled = {}
    usable = np.ones(n, dtype=bool)
    for kp in RETARGET_KEYPOINTS:
        series = [hand.keypoints[t, kp] if valid[t, kp] else None for t in range(n)]
        pos, _, _, _ = interpolate_gaps(series, max_gap=cfg.max_gap)
        filled[kp] = pos
        usable &= np.array([p is not None for p in pos])

    if not usable.any():
        raise EmptyAfterMasking("no usable frames after masking and interpolation")

    frames_out = []
    poses_out = []
    grasp_out = []
    start = None
    for i in range(n + 1):
        if i < n and usable[i]:
            if start is None:
                start = i
            continue
        if start is None:
            continue
        seg = np.arange(start, i)
        start = None
        kp_pos = {
            kp: np.stack([filled[kp][t] for t in seg]) for kp in RETARGET_KEYPOINTS
        }
        if seg.size >= cfg.sg_window:
            for kp in RETARGET_KEYPOINTS:
                kp_pos[kp] = savitzky_golay(kp_pos[kp], cfg.sg_window, cfg.sg_order)
        translations = 0.5 * (kp_pos[THUMB_TIP] + kp_pos[INDEX_TIP])
        axes = [
            (
                kp_pos[INDEX_MCP][j] - kp_pos[THUMB_MCP][j],
                0.5 * (kp_pos[THUMB_MCP][j] + kp_pos[INDEX_MCP][j]) - kp_pos[WRIST][j],
            )
            for j in range(seg.size)
        ]
        rotations = ema_axes(axes, cfg.ema_alpha)
        g = np.array(
            [
                compute_grasp(kp_pos[THUMB_TIP][j], kp_pos[INDEX_TIP][j], cfg)
                for j in range(seg.size)
            ]
        )
        g = _clean_grasp(g, cfg)
        frames_out.append(seg)
        poses_out.extend(SE3(rotations[j], translations[j]) for j in range(seg.size))
        grasp_out.append(g)

    return GripperTraj(
        frames=np.concatenate(frames_out),
        poses=poses_out,
        grasp=np.concatenate(grasp_out),
    )
