"""Rigid transforms and the 9D (normalized translation + 6D rotation) flattening."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from egoflow.numerics.rotation import rot_to_6d, six_d_to_rot


@dataclass(frozen=True)
class SE3:
    """Rigid transform: p_world = rot @ p_local + trans."""

    rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rot", np.asarray(self.rot, dtype=float))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=float))

    @staticmethod
    def identity() -> "SE3":
        return SE3(np.eye(3), np.zeros(3))

    def compose(self, other: "SE3") -> "SE3":
        return SE3(self.rot @ other.rot, self.rot @ other.trans + self.trans)

    def inverse(self) -> "SE3":
        rt = self.rot.T
        return SE3(rt, -(rt @ self.trans))

    def apply(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return p @ self.rot.T + self.trans

    def almost_equal(self, other: "SE3", tol: float = 1e-9) -> bool:
        return (
            np.max(np.abs(self.rot - other.rot)) <= tol
            and np.max(np.abs(self.trans - other.trans)) <= tol
        )


def se3_compose(a: SE3, b: SE3) -> SE3:
    return a.compose(b)


def se3_inverse(a: SE3) -> SE3:
    return a.inverse()


def flatten_se3_9d(pose: SE3, stats) -> np.ndarray:
    """[(t - mu) / sigma | rot6d]; translations use the fitted stats."""
    t_norm = (pose.trans - stats.mean) / stats.std
    return np.concatenate([t_norm, rot_to_6d(pose.rot)])


def unflatten_se3_9d(vec: np.ndarray, stats) -> SE3:
    """Inverse of flatten_se3_9d; projects the 6D block to a valid rotation."""
    vec = np.asarray(vec, dtype=float)
    trans = vec[:3] * stats.std + stats.mean
    return SE3(six_d_to_rot(vec[3:9]), trans)
