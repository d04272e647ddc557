"""Rotation/transform algebra and 1-D signal filters."""

from egoflow.numerics.rotation import (
    EPS_DEGENERATE,
    gram_schmidt_frame,
    quat_from_rotmat,
    quat_to_rotmat,
    rot_to_6d,
    rotation_angle,
    six_d_to_rot,
    slerp,
)
from egoflow.numerics.se3 import (
    SE3,
    flatten_se3_9d,
    se3_compose,
    se3_inverse,
    unflatten_se3_9d,
)
from egoflow.numerics.camera import Intrinsics, project
from egoflow.numerics.filters import (
    ema_axes,
    flicker_suppress,
    interpolate_gaps,
    median_filter,
    savitzky_golay,
)

__all__ = [
    "EPS_DEGENERATE",
    "gram_schmidt_frame",
    "quat_from_rotmat",
    "quat_to_rotmat",
    "rot_to_6d",
    "rotation_angle",
    "six_d_to_rot",
    "slerp",
    "SE3",
    "se3_compose",
    "se3_inverse",
    "flatten_se3_9d",
    "unflatten_se3_9d",
    "Intrinsics",
    "project",
    "savitzky_golay",
    "ema_axes",
    "interpolate_gaps",
    "median_filter",
    "flicker_suppress",
]
