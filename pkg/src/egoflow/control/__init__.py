"""Chunked closed-loop controller."""

from egoflow.control.rollout import (
    EpisodeResult,
    PolicyBundle,
    RolloutConfig,
    encode_env,
    euler_rollout,
    grasp_decision,
    pack_actions,
    run_episode,
    safety_clamp,
    schedule_step,
    smooth_targets,
    unpack_actions,
)

__all__ = [
    "EpisodeResult",
    "PolicyBundle",
    "RolloutConfig",
    "encode_env",
    "euler_rollout",
    "grasp_decision",
    "pack_actions",
    "run_episode",
    "safety_clamp",
    "schedule_step",
    "smooth_targets",
    "unpack_actions",
]
