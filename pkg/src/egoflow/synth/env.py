"""Kinematic rollout environment: teleporting grippers, rigid attachment.

No dynamics: grippers jump to their commanded targets, a close command
within the attach tolerance of a free graspable object latches it to the
hand, an open command releases it in place. Success predicates mirror the
scripted tasks.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from egoflow.numerics.se3 import SE3
from egoflow.synth.scene import SceneSample, SceneSpec, grasp_orientation, look_at, sample_scene

ATTACH_TOLERANCE = 0.01  # meters
REACH_TOLERANCE = 0.03
PLACE_XY_TOLERANCE = 0.04
PLACE_Z_TOLERANCE = 0.06


@dataclass
class TaskDef:
    task: str
    item_ids: list[int]
    graspable: list[bool]
    goal_positions: dict[int, np.ndarray]
    goal_options: dict[str, np.ndarray] = field(default_factory=dict)
    hand_for_item: dict[int, str] = field(default_factory=dict)


@dataclass
class EnvState:
    hand_poses: dict[str, SE3]
    hand_closed: dict[str, bool]
    object_poses: list[SE3]
    attached_to: list[str | None]  # per object: hand id or None
    carry: list[SE3 | None]  # per object: hand-to-object transform while attached
    camera_pose: SE3
    cycle: int = 0
    success: bool = False
    done_cycle: dict[int, int] = field(default_factory=dict)  # item -> first at-goal cycle
    realized_mode: str | None = None


def make_env(spec: SceneSpec, seed: int) -> tuple[EnvState, TaskDef]:
    """Initial environment state drawn from the demo scene distribution."""
    rng = np.random.default_rng(seed)
    scene = sample_scene(spec, rng)
    return env_from_scene(scene, spec.task)


def env_from_scene(scene: SceneSample, task: str) -> tuple[EnvState, TaskDef]:
    task_def = TaskDef(
        task=task,
        item_ids=list(scene.item_ids),
        graspable=[o.graspable for o in scene.objects],
        goal_positions={k: np.asarray(v, dtype=float) for k, v in scene.goal_positions.items()},
        goal_options={k: np.asarray(v, dtype=float) for k, v in scene.goal_options.items()},
    )
    if task == "bimanual-ordered":
        task_def.hand_for_item = {scene.item_ids[0]: "left", scene.item_ids[1]: "right"}
    elif task_def.item_ids:
        task_def.hand_for_item = {task_def.item_ids[0]: "right"}
    state = EnvState(
        hand_poses={
            side: SE3(grasp_orientation(scene.grasp_yaw[side]), scene.hand_rest[side])
            for side in ("left", "right")
        },
        hand_closed={"left": False, "right": False},
        object_poses=[o.pose() for o in scene.objects],
        attached_to=[None] * len(scene.objects),
        carry=[None] * len(scene.objects),
        camera_pose=look_at(scene.stand_position, scene.scene_center),
    )
    return state, task_def


def _at_goal(pos: np.ndarray, goal: np.ndarray) -> bool:
    return (
        np.linalg.norm(pos[:2] - goal[:2]) <= PLACE_XY_TOLERANCE
        and abs(pos[2] - goal[2]) <= PLACE_Z_TOLERANCE + 0.02
    )


def _evaluate_success(state: EnvState, task: TaskDef) -> None:
    if state.success:
        return
    if task.task == "reach":
        item = task.item_ids[0]
        target = state.object_poses[item].trans
        for pose in state.hand_poses.values():
            if np.linalg.norm(pose.trans - target) <= REACH_TOLERANCE:
                state.success = True
                return
        return

    for item in task.item_ids:
        if item in state.done_cycle:
            continue
        if state.attached_to[item] is not None:
            continue
        pos = state.object_poses[item].trans
        if task.task == "pick-place" and task.goal_options:
            for mode, goal in task.goal_options.items():
                if _at_goal(pos, goal):
                    state.done_cycle[item] = state.cycle
                    state.realized_mode = mode
                    break
        else:
            if _at_goal(pos, task.goal_positions[item]):
                state.done_cycle[item] = state.cycle
    if task.task == "bimanual-ordered":
        left_item, right_item = task.item_ids
        if left_item in state.done_cycle and right_item in state.done_cycle:
            state.success = state.done_cycle[left_item] <= state.done_cycle[right_item]
    else:
        state.success = all(item in state.done_cycle for item in task.item_ids)


def step_env(
    state: EnvState,
    targets: dict[str, SE3],
    close: dict[str, bool],
    task: TaskDef,
) -> EnvState:
    """One kinematic step; pure (returns a new state)."""
    new = copy.deepcopy(state)
    new.cycle = state.cycle + 1
    for side, pose in targets.items():
        if not np.all(np.isfinite(pose.trans)) or not np.all(np.isfinite(pose.rot)):
            raise ValueError("non-finite target pose")
        new.hand_poses[side] = pose
        new.hand_closed[side] = bool(close[side])

    # Releases first, then attachments, then rigid carry.
    for oid, holder in enumerate(new.attached_to):
        if holder is not None and not new.hand_closed[holder]:
            new.attached_to[oid] = None
            new.carry[oid] = None
    for side, closed in new.hand_closed.items():
        if not closed:
            continue
        if any(h == side for h in new.attached_to):
            continue
        hand = new.hand_poses[side]
        best = None
        best_dist = ATTACH_TOLERANCE
        for oid, pose in enumerate(new.object_poses):
            if not task.graspable[oid] or new.attached_to[oid] is not None:
                continue
            dist = float(np.linalg.norm(hand.trans - pose.trans))
            if dist <= best_dist:
                best = oid
                best_dist = dist
        if best is not None:
            new.attached_to[best] = side
            new.carry[best] = hand.inverse().compose(new.object_poses[best])
    for oid, holder in enumerate(new.attached_to):
        if holder is not None:
            new.object_poses[oid] = new.hand_poses[holder].compose(new.carry[oid])

    _evaluate_success(new, task)
    return new
