"""Synthetic recordings with ground truth, and the kinematic rollout environment."""

from egoflow.synth.scene import SceneSample, SceneSpec, sample_scene
from egoflow.synth.generate import DEFAULT_INTRINSICS, gen_recording
from egoflow.synth.env import ATTACH_TOLERANCE, EnvState, TaskDef, env_from_scene, make_env, step_env

__all__ = [
    "SceneSample",
    "SceneSpec",
    "sample_scene",
    "gen_recording",
    "DEFAULT_INTRINSICS",
    "EnvState",
    "TaskDef",
    "ATTACH_TOLERANCE",
    "env_from_scene",
    "make_env",
    "step_env",
]
