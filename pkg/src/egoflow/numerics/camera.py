"""Pinhole camera model and world-to-image projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from egoflow.errors import BehindCamera
from egoflow.numerics.se3 import SE3

MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def project(k: Intrinsics, cam_pose: SE3, p_world: np.ndarray) -> np.ndarray:
    """Project a world point through a camera-to-world pose to pixels (u, v)."""
    p_cam = cam_pose.inverse().apply(p_world)
    if p_cam[2] <= MIN_DEPTH:
        raise BehindCamera(f"depth {p_cam[2]:.3e} m behind or on the camera plane")
    return np.array(
        [k.fx * p_cam[0] / p_cam[2] + k.cx, k.fy * p_cam[1] / p_cam[2] + k.cy]
    )


def projection_matrix(k: Intrinsics, cam_pose: SE3) -> np.ndarray:
    """3x4 world-to-image matrix K [R^T | -R^T t] for a camera-to-world pose."""
    rt = cam_pose.rot.T
    return k.matrix() @ np.hstack([rt, (-(rt @ cam_pose.trans)).reshape(3, 1)])
