"""Closed-loop control: Euler ODE rollout, chunk scheduling, grasp logic,
smoothing, and the safety cage, evaluated in the kinematic environment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from egoflow.errors import DegenerateFrame, NonFiniteOutput
from egoflow.ict import EntityPose, NormStats, RefFrameMode, encode_scene
from egoflow.numerics.rotation import (
    quat_from_rotmat,
    quat_to_rotmat,
    rotation_angle,
    slerp,
)
from egoflow.numerics.se3 import SE3, flatten_se3_9d, unflatten_se3_9d
from egoflow.policy.losses import ACTION_DIM, CHUNK_STEPS
from egoflow.policy.network import PolicyNet
from egoflow.synth.env import EnvState, TaskDef, step_env


@dataclass(frozen=True)
class RolloutConfig:
    euler_steps: int = 20
    control_hz: float = 10.0
    step_stride: int = 2
    look_ahead: int = 25
    grasp_threshold: float = 0.6
    grasp_latch: bool = False
    # None scans the full chunk; an integer scans only the first N steps.
    # A short prefix delays closure until it is imminent, keeping the
    # observed grasp state consistent with the demonstrations.
    grasp_scan_steps: int | None = None
    pos_ema_alpha: float = 0.5
    overlap_blend: int = 12
    cage_pos: float = 0.08  # meters per cycle
    cage_rot: float = 0.02  # radians per cycle
    max_cycles: int = 400
    redraw_noise: bool = False
    seed: int = 0


@dataclass
class EpisodeResult:
    success: bool
    cycles: int
    clamp_count: int
    realized_mode: str | None
    log: list = field(default_factory=list)
    error: str | None = None

    def commanded_positions(self, side: str) -> np.ndarray:
        return np.array([row["commanded"][side]["pos"] for row in self.log])


def euler_rollout(field, x0: np.ndarray, steps: int = 20) -> np.ndarray:
    """Integrate x' = field(x, t) from t=0 to 1 with fixed-step Euler."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.asarray(x0, dtype=np.float32).copy()
    dt = 1.0 / steps
    for i in range(steps):
        v = field(x, i * dt)
        x = x + np.asarray(v, dtype=np.float32) * dt
        if not np.all(np.isfinite(x)):
            raise NonFiniteOutput(f"non-finite state at Euler step {i}")
    return x


def unpack_actions(chunk: np.ndarray, stats: NormStats):
    """Chunk rows to per-step bimanual (SE3 in the reference frame, grasp
    probability). 6D blocks are projected back to valid rotations."""
    chunk = np.asarray(chunk, dtype=float)
    steps = []
    for row in chunk:
        hands = {}
        for h, side in enumerate(("left", "right")):
            part = row[10 * h : 10 * (h + 1)]
            pose = unflatten_se3_9d(part[:9], stats)
            prob = 1.0 / (1.0 + np.exp(-np.clip(part[9], -60.0, 60.0)))
            hands[side] = (pose, float(prob))
        steps.append(hands)
    return steps


def pack_actions(steps, stats: NormStats) -> np.ndarray:
    """Inverse of unpack_actions (probabilities back to logits)."""
    chunk = np.empty((len(steps), ACTION_DIM))
    for j, hands in enumerate(steps):
        for h, side in enumerate(("left", "right")):
            pose, prob = hands[side]
            prob = min(max(prob, 1e-9), 1.0 - 1e-9)
            chunk[j, 10 * h : 10 * h + 9] = flatten_se3_9d(pose, stats)
            chunk[j, 10 * h + 9] = np.log(prob / (1.0 - prob))
    return chunk


def schedule_step(cycles_since_replan: int, cfg: RolloutConfig, chunk_steps: int = CHUNK_STEPS) -> int:
    """Chunk index to execute this cycle, clamped to the horizon."""
    return min(cfg.look_ahead + cfg.step_stride * cycles_since_replan, chunk_steps - 1)


def grasp_decision(probs: np.ndarray, cfg: RolloutConfig, latched: dict) -> dict:
    """Any-over-horizon rule per hand; latch mode keeps a closed hand closed."""
    window = probs if cfg.grasp_scan_steps is None else probs[: cfg.grasp_scan_steps]
    close = {}
    for h, side in enumerate(("left", "right")):
        fire = bool(np.any(window[:, h] > cfg.grasp_threshold))
        if cfg.grasp_latch and latched.get(side, False):
            fire = True
        close[side] = fire
    return close


def smooth_targets(prev: SE3, new: SE3, alpha: float) -> SE3:
    """Position EMA + quaternion SLERP toward the new target."""
    trans = alpha * new.trans + (1.0 - alpha) * prev.trans
    rot = quat_to_rotmat(slerp(quat_from_rotmat(prev.rot), quat_from_rotmat(new.rot), alpha))
    return SE3(rot, trans)


def safety_clamp(prev: SE3, proposed: SE3, cfg: RolloutConfig):
    """Scale per-cycle displacement to the cage (norm-preserving direction)."""
    clamped = False
    delta = proposed.trans - prev.trans
    norm = float(np.linalg.norm(delta))
    trans = proposed.trans
    if norm > cfg.cage_pos:
        trans = prev.trans + delta * (cfg.cage_pos / norm)
        clamped = True
    r_step = proposed.rot @ prev.rot.T
    angle = rotation_angle(r_step)
    rot = proposed.rot
    if angle > cfg.cage_rot:
        q = quat_from_rotmat(r_step)
        q_clamped = slerp(np.array([1.0, 0.0, 0.0, 0.0]), q, cfg.cage_rot / angle)
        rot = quat_to_rotmat(q_clamped) @ prev.rot
        clamped = True
    return SE3(rot, trans), clamped


@dataclass
class PolicyBundle:
    net: PolicyNet
    stats: NormStats
    ref_mode: RefFrameMode = RefFrameMode.CAMERA
    chunk_steps: int = CHUNK_STEPS

    def make_field(self, tokens, slots, present):
        tok = torch.from_numpy(tokens[None]).float()
        slo = torch.from_numpy(slots[None])
        pre = torch.from_numpy(present[None])
        net = self.net

        def field(x: np.ndarray, t: float) -> np.ndarray:
            with torch.no_grad():
                xt = torch.from_numpy(np.ascontiguousarray(x[None], dtype=np.float32))
                v = net(xt, torch.tensor([t], dtype=torch.float32), tok, slo, pre)
            return v[0].numpy()

        return field

    def plan(self, state: EnvState, task: TaskDef, ref: SE3, x0: np.ndarray, cfg: "RolloutConfig") -> np.ndarray:
        tokens, slots, present = encode_env(state, self, ref)
        field = self.make_field(tokens, slots, present)
        return euler_rollout(field, x0, cfg.euler_steps)


def encode_env(state: EnvState, bundle: PolicyBundle, ref: SE3):
    entities = []
    for side in ("left", "right"):
        grasp = 0.0 if state.hand_closed[side] else 1.0
        entities.append(EntityPose("hand", side, state.hand_poses[side], grasp, present=True))
    for oid, pose in enumerate(state.object_poses):
        entities.append(EntityPose("object", oid, pose, None))
    kwargs = {"camera_pose": ref} if bundle.ref_mode is RefFrameMode.CAMERA else {"anchor_pose": ref}
    return encode_scene(entities, bundle.ref_mode, bundle.stats, **kwargs)


def run_episode(
    bundle: PolicyBundle,
    env0: EnvState,
    task: TaskDef,
    cfg: RolloutConfig,
) -> EpisodeResult:
    """Closed loop: encode, rollout, unpack, schedule, grasp, smooth, clamp, step."""
    gen = torch.Generator().manual_seed(cfg.seed)
    x0 = torch.randn((bundle.chunk_steps, ACTION_DIM), generator=gen).numpy()
    if bundle.ref_mode is RefFrameMode.ANCHOR:
        ref = env0.object_poses[task.item_ids[0]] if task.item_ids else SE3.identity()
    else:
        ref = env0.camera_pose

    state = env0
    commanded = {side: state.hand_poses[side] for side in ("left", "right")}
    latched = {"left": False, "right": False}
    clamp_count = 0
    log = []
    result = EpisodeResult(success=False, cycles=0, clamp_count=0, realized_mode=None, log=log)

    for cycle in range(cfg.max_cycles):
        if cfg.redraw_noise:
            x0 = torch.randn((bundle.chunk_steps, ACTION_DIM), generator=gen).numpy()
        chunk = bundle.plan(state, task, ref, x0, cfg)
        try:
            steps = unpack_actions(chunk, bundle.stats)
        except DegenerateFrame as err:
            # A collapsed rotation block means the policy is lost; count the
            # episode as failed rather than aborting the evaluation run.
            result.error = f"DegenerateFrame at cycle {cycle}: {err}"
            break
        probs = np.array([[hands["left"][1], hands["right"][1]] for hands in steps])
        idx = schedule_step(0, cfg, bundle.chunk_steps)
        close = grasp_decision(probs, cfg, latched)
        latched = {k: latched[k] or close[k] for k in latched}

        alpha = cfg.pos_ema_alpha * min(1.0, (cycle + 1) / cfg.overlap_blend)
        targets = {}
        clamp_flags = {}
        for side in ("left", "right"):
            pose_rel = steps[idx][side][0]
            pose_world = ref.compose(pose_rel)
            smoothed = smooth_targets(commanded[side], pose_world, alpha)
            clamped_pose, was_clamped = safety_clamp(commanded[side], smoothed, cfg)
            targets[side] = clamped_pose
            clamp_flags[side] = was_clamped
            clamp_count += int(was_clamped)
        commanded = targets

        state = step_env(state, targets, close, task)
        log.append(
            {
                "cycle": cycle,
                "t": cycle / cfg.control_hz,
                "commanded": {
                    side: {
                        "pos": targets[side].trans.tolist(),
                        "quat": quat_from_rotmat(targets[side].rot).tolist(),
                    }
                    for side in ("left", "right")
                },
                "close": {k: bool(v) for k, v in close.items()},
                "max_prob": {side: float(probs[:, h].max()) for h, side in enumerate(("left", "right"))},
                "clamped": clamp_flags,
                "objects": [pose.trans.tolist() for pose in state.object_poses],
                "success": bool(state.success),
            }
        )
        if state.success:
            break

    result.success = bool(state.success)
    result.cycles = len(log)
    result.clamp_count = clamp_count
    result.realized_mode = state.realized_mode
    return result
