"""Interaction token encoding: per-entity 29-dim vectors plus normalization stats.

Token layout: [type (1) | pose in reference frame (9) | left hand in the
entity's local frame (9) | right hand in the entity's local frame (9) |
grasp (1)]. Each 9-block is a normalized translation followed by the 6D
rotation encoding. Tokens are emitted as float32, the precision the policy
network consumes; this is what makes the anchor-frame encoding bit-stable
under equivalent world parameterizations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from egoflow.errors import AnchorUnavailable, EmptyCorpus
from egoflow.numerics.se3 import SE3, flatten_se3_9d, unflatten_se3_9d

TOKEN_DIM = 29
TYPE_HAND = 1.0
TYPE_OBJECT = 0.0
OBJECT_GRASP_SENTINEL = -1.0

# Fixed entity ordering: left hand, right hand, then objects by id.
SLOT_LEFT = 0
SLOT_RIGHT = 1
SLOT_OBJECT_BASE = 2

# Channel index groups within a token.
POS_CHANNELS = np.array([1, 2, 3, 10, 11, 12, 19, 20, 21])
ROT_CHANNELS = np.array([4, 5, 6, 7, 8, 9, 13, 14, 15, 16, 17, 18, 22, 23, 24, 25, 26, 27])
GRASP_CHANNEL = 28


class RefFrameMode(enum.Enum):
    CAMERA = "camera"
    ANCHOR = "anchor"


@dataclass(frozen=True)
class NormStats:
    """Per-axis translation mean/std in meters, std floored at 1e-6."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "std", np.maximum(np.asarray(self.std, dtype=float), 1e-6))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "NormStats":
        return NormStats(np.array(d["mean"]), np.array(d["std"]))


def fit_norm_stats(translations: np.ndarray) -> NormStats:
    """Per-axis mean/std of an (N, 3) corpus of reference-frame translations."""
    translations = np.asarray(translations, dtype=float)
    if translations.size == 0:
        raise EmptyCorpus("cannot fit normalization stats on an empty corpus")
    translations = translations.reshape(-1, 3)
    return NormStats(translations.mean(axis=0), translations.std(axis=0))


def normalize(vectors: np.ndarray, stats: NormStats) -> np.ndarray:
    return (np.asarray(vectors, dtype=float) - stats.mean) / stats.std


def denormalize(vectors: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(vectors, dtype=float) * stats.std + stats.mean


def binarize_grasp(g: float) -> float:
    """Aperture scalar to binary: 0 = closed, 1 = open (threshold 0.5)."""
    return 1.0 if g >= 0.5 else 0.0


@dataclass(frozen=True)
class EntityPose:
    """One scene entity: a hand ('left'/'right') or an object (by integer id)."""

    kind: str  # "hand" | "object"
    entity_id: object  # "left"/"right" for hands, int for objects
    pose: SE3 = field(default_factory=SE3.identity)
    grasp: float | None = None
    present: bool = True

    def slot(self) -> int:
        if self.kind == "hand":
            return SLOT_LEFT if self.entity_id == "left" else SLOT_RIGHT
        return SLOT_OBJECT_BASE + int(self.entity_id)


def _relative(a: SE3, b: SE3, b_present: bool) -> SE3:
    """b expressed in a's frame; identity placeholder when b is absent.

    Bitwise-equal poses short-circuit to an exact identity so self-relative
    blocks carry no rounding noise (required for bit-stable anchor tokens).
    """
    if not b_present:
        return SE3.identity()
    if np.array_equal(a.rot, b.rot) and np.array_equal(a.trans, b.trans):
        return SE3.identity()
    return a.inverse().compose(b)


def encode_token(
    entity: EntityPose,
    left: EntityPose,
    right: EntityPose,
    ref: SE3,
    stats: NormStats,
) -> np.ndarray:
    """Encode one entity into its 29-dim token (float32)."""
    token = np.empty(TOKEN_DIM, dtype=float)
    token[0] = TYPE_HAND if entity.kind == "hand" else TYPE_OBJECT
    token[1:10] = flatten_se3_9d(_relative(ref, entity.pose, entity.present), stats)
    token[10:19] = flatten_se3_9d(
        _relative(entity.pose, left.pose, left.present and entity.present), stats
    )
    token[19:28] = flatten_se3_9d(
        _relative(entity.pose, right.pose, right.present and entity.present), stats
    )
    if entity.kind == "hand":
        token[28] = binarize_grasp(entity.grasp) if entity.present and entity.grasp is not None else OBJECT_GRASP_SENTINEL
    else:
        token[28] = OBJECT_GRASP_SENTINEL
    return token.astype(np.float32)


def decode_token(token: np.ndarray, stats: NormStats) -> tuple[SE3, SE3, SE3]:
    """Recover the three SE(3) blocks of a token (ref-frame pose, LH, RH)."""
    token = np.asarray(token, dtype=float)
    return (
        unflatten_se3_9d(token[1:10], stats),
        unflatten_se3_9d(token[10:19], stats),
        unflatten_se3_9d(token[19:28], stats),
    )


def order_entities(entities) -> list[EntityPose]:
    """Fixed ordering: left hand, right hand, then objects by ascending id."""
    hands = {e.entity_id: e for e in entities if e.kind == "hand"}
    objects = sorted((e for e in entities if e.kind == "object"), key=lambda e: int(e.entity_id))
    ordered = []
    for hand_id in ("left", "right"):
        ordered.append(hands.get(hand_id, EntityPose("hand", hand_id, SE3.identity(), None, present=False)))
    ordered.extend(objects)
    return ordered


def encode_scene(
    entities,
    mode: RefFrameMode,
    stats: NormStats,
    camera_pose: SE3 | None = None,
    anchor_pose: SE3 | None = None,
):
    """Encode a variable-length entity set into an ordered token list.

    Returns (tokens (E, 29) float32, slot ids (E,), present mask (E,)).
    """
    if mode is RefFrameMode.CAMERA:
        if camera_pose is None:
            raise ValueError("camera mode requires a camera pose")
        ref = camera_pose
    else:
        if anchor_pose is None:
            raise AnchorUnavailable("anchor mode requires a grasped-object pose")
        ref = anchor_pose
    ordered = order_entities(entities)
    if not ordered:
        raise ValueError("need at least one entity")
    left, right = ordered[0], ordered[1]
    tokens = np.stack([encode_token(e, left, right, ref, stats) for e in ordered])
    slots = np.array([e.slot() for e in ordered], dtype=np.int64)
    present = np.array([e.present for e in ordered], dtype=bool)
    return tokens, slots, present
