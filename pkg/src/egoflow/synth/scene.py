"""Scene sampling and scripted motion profiles for synthetic recordings.

Motions use trapezoidal velocity profiles (piecewise-quadratic positions)
so the downstream Savitzky-Golay stage reproduces them exactly away from
segment joins; grasp aperture ramps are linear for the same reason.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from egoflow.errors import InvalidSpec
from egoflow.numerics.se3 import SE3

TASKS = ("reach", "pick-place", "bimanual-ordered")

# Hand skeleton constants (meters, gripper-local frame: x jaw, y forward).
FINGER_LEN = 0.07
WRIST_BACK = 0.16
MCP_HALF_SEP = 0.025
APERTURE_OPEN = 0.09
APERTURE_CLOSED = 0.03

# Speed caps (m/s). Transport stays under the 0.15 m/s phase-demotion
# threshold; final approaches are slow so the controller can converge.
SPEED_TRANSPORT = 0.12
SPEED_DESCEND = 0.08
SPEED_FINAL = 0.03
RAMP_SECONDS = 0.4

ITEM_HEIGHT = 0.02
HOVER_HEIGHT = 0.12
PLACE_HEIGHT = 0.03


@dataclass(frozen=True)
class SceneSpec:
    """Synthetic task description with randomization and noise ranges."""

    task: str = "pick-place"
    object_radius: float = 0.035
    workspace_x: tuple[float, float] = (-0.35, 0.35)
    workspace_y: tuple[float, float] = (-0.12, 0.28)
    offset_range: tuple[float, float] = (0.0, 0.5)
    sigma_px: float = 0.0
    sigma_kp: float = 0.0
    conf_dropout: float = 0.0
    min_duration: int = 90  # frames
    seed: int = 0
    dual_goal: bool = False
    fps: float = 30.0
    track_points: int = 8

    def validate(self) -> None:
        if self.task not in TASKS:
            raise InvalidSpec(f"unknown task {self.task!r}")
        if self.workspace_x[0] >= self.workspace_x[1] or self.workspace_y[0] >= self.workspace_y[1]:
            raise InvalidSpec("workspace bounds must be non-empty")
        if min(self.sigma_px, self.sigma_kp, self.conf_dropout) < 0:
            raise InvalidSpec("noise levels must be non-negative")
        if self.min_duration < 90:
            raise InvalidSpec("duration must cover sweep + manipulation + finish (>= 90 frames)")
        if not (0 <= self.offset_range[0] <= self.offset_range[1]):
            raise InvalidSpec("offset range must be ordered and non-negative")
        if self.fps <= 0 or self.track_points < 1:
            raise InvalidSpec("fps and track point count must be positive")


@dataclass
class ObjectInit:
    position: np.ndarray  # (3,) centroid
    yaw: float
    radius: float
    graspable: bool

    def pose(self) -> SE3:
        return SE3(rot_z(self.yaw), self.position)


@dataclass
class SceneSample:
    """Everything randomized once per demonstration/episode."""

    objects: list[ObjectInit]
    item_ids: list[int]
    goal_positions: dict[int, np.ndarray]  # item id -> goal centroid
    goal_options: dict[str, np.ndarray] = field(default_factory=dict)  # dual-goal modes
    chosen_mode: str | None = None
    stand_position: np.ndarray = field(default_factory=lambda: np.array([0.1, -0.55, 0.45]))
    scene_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    hand_rest: dict[str, np.ndarray] = field(default_factory=dict)
    grasp_yaw: dict[str, float] = field(default_factory=dict)


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def look_at(eye: np.ndarray, target: np.ndarray) -> SE3:
    """Camera-to-world pose with +z forward, +x right, +y down."""
    forward = target - eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return SE3(np.column_stack([right, down, forward]), eye)


def grasp_orientation(yaw: float) -> np.ndarray:
    """Top-down pinch frame: jaw axis horizontal, forward axis pitched down."""
    jaw = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    forward = 0.342 * np.array([-np.sin(yaw), np.cos(yaw), 0.0]) + np.array([0.0, 0.0, -0.940])
    forward = forward / np.linalg.norm(forward)
    return np.column_stack([jaw, forward, np.cross(jaw, forward)])


def _clamp_into(p: np.ndarray, spec: SceneSpec, margin: float = 0.05) -> np.ndarray:
    out = p.copy()
    out[0] = np.clip(out[0], spec.workspace_x[0] + margin, spec.workspace_x[1] - margin)
    out[1] = np.clip(out[1], spec.workspace_y[0] + margin, spec.workspace_y[1] - margin)
    return out


def sample_scene(spec: SceneSpec, rng: np.random.Generator) -> SceneSample:
    """Randomize object placement, camera stand, and hand rests for one episode."""
    spec.validate()
    sample = SceneSample(objects=[], item_ids=[], goal_positions={})
    sample.stand_position = np.array([0.08, -0.55, 0.45]) + rng.uniform(-0.04, 0.04, size=3) * np.array([1, 1, 0.6])
    sample.scene_center = np.array([0.0, 0.08, 0.0])
    sample.hand_rest = {
        "left": np.array([-0.20, -0.16, 0.16]) + rng.uniform(-0.03, 0.03, size=3),
        "right": np.array([0.20, -0.16, 0.16]) + rng.uniform(-0.03, 0.03, size=3),
    }
    sample.grasp_yaw = {
        "left": rng.uniform(-0.26, 0.26),
        "right": rng.uniform(-0.26, 0.26),
    }

    def add_object(position, graspable):
        sample.objects.append(
            ObjectInit(
                position=np.asarray(position, dtype=float),
                yaw=rng.uniform(-np.pi, np.pi),
                radius=spec.object_radius,
                graspable=graspable,
            )
        )
        return len(sample.objects) - 1

    if spec.task == "reach":
        item = _clamp_into(
            np.array([rng.uniform(-0.1, 0.25), rng.uniform(0.0, 0.2), ITEM_HEIGHT]), spec
        )
        iid = add_object(item, graspable=True)
        sample.item_ids = [iid]
        sample.goal_positions = {iid: item.copy()}
        return sample

    if spec.task == "pick-place":
        item = _clamp_into(
            np.array([rng.uniform(0.05, 0.3), rng.uniform(0.0, 0.2), ITEM_HEIGHT]), spec
        )
        length = rng.uniform(*spec.offset_range)
        iid = add_object(item, graspable=True)
        if spec.dual_goal:
            phi = rng.uniform(0.35, 0.6)
            length = max(length, 0.15)
            goals = {}
            for mode, sign in (("A", 1.0), ("B", -1.0)):
                direction = np.array([-np.cos(phi), sign * np.sin(phi), 0.0])
                goal = _clamp_into(item + length * direction, spec)
                goal[2] = 0.005
                add_object(goal, graspable=False)
                goals[mode] = goal
            sample.goal_options = goals
            sample.chosen_mode = "A" if rng.uniform() < 0.5 else "B"
            sample.goal_positions = {iid: goals[sample.chosen_mode]}
        else:
            phi = rng.uniform(-0.45, 0.45)
            direction = np.array([-np.cos(phi), np.sin(phi), 0.0])
            goal = _clamp_into(item + length * direction, spec)
            goal[2] = 0.005
            add_object(goal, graspable=False)
            sample.goal_positions = {iid: goal}
        sample.item_ids = [iid]
        return sample

    # bimanual-ordered: the left hand serves its item first, then the right.
    offsets = np.clip(rng.uniform(0.10, 0.22, size=2), *(0.05, 0.5))
    item_left = _clamp_into(np.array([rng.uniform(-0.28, -0.12), rng.uniform(0.0, 0.18), ITEM_HEIGHT]), spec)
    item_right = _clamp_into(np.array([rng.uniform(0.12, 0.28), rng.uniform(0.0, 0.18), ITEM_HEIGHT]), spec)
    id_left = add_object(item_left, graspable=True)
    id_right = add_object(item_right, graspable=True)
    for item, iid, offset, sign in ((item_left, id_left, offsets[0], -1.0), (item_right, id_right, offsets[1], 1.0)):
        goal = _clamp_into(item + np.array([sign * 0.3 * offset, offset, 0.0]), spec)
        goal[2] = 0.005
        add_object(goal, graspable=False)
        sample.goal_positions[iid] = goal
    sample.item_ids = [id_left, id_right]
    return sample


def trapezoid_positions(start: np.ndarray, end: np.ndarray, frames: int, fps: float, ramp_s: float = RAMP_SECONDS) -> np.ndarray:
    """Positions along start->end with a trapezoidal speed profile.

    Returns `frames` samples covering (0, T]; the final sample lands on
    `end` exactly. Piecewise quadratic in time.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    total = frames / fps
    ramp = min(ramp_s, 0.4 * total)
    s = np.empty(frames)
    for k in range(frames):
        tau = (k + 1) / fps
        s[k] = _trapezoid_s(tau, total, ramp)
    return start[None, :] + s[:, None] * (end - start)[None, :]


def _trapezoid_s(tau: float, total: float, ramp: float) -> float:
    # Normalized arc length: accelerate over `ramp`, cruise, decelerate.
    v_peak = 1.0 / (total - ramp)
    if tau < ramp:
        return 0.5 * v_peak / ramp * tau * tau
    if tau <= total - ramp:
        return 0.5 * v_peak * ramp + v_peak * (tau - ramp)
    rem = total - tau
    return 1.0 - 0.5 * v_peak / ramp * rem * rem


def move_frames(distance: float, speed: float, fps: float, ramp_s: float = RAMP_SECONDS) -> int:
    """Frame count for a trapezoidal move at the given plateau speed."""
    if distance <= 1e-9:
        return max(int(round(ramp_s * fps)), 2)
    return max(int(np.ceil((distance / speed + ramp_s) * fps)), 3)


class MotionTrack:
    """Accumulates one hand's scripted positions and grasp aperture."""

    def __init__(self, start: np.ndarray, fps: float):
        self.fps = fps
        self.positions = [np.asarray(start, dtype=float)]
        self.aperture = [APERTURE_OPEN]

    @property
    def frames(self) -> int:
        return len(self.positions)

    def current(self) -> np.ndarray:
        return self.positions[-1]

    def move_to(self, target, speed) -> None:
        target = np.asarray(target, dtype=float)
        n = move_frames(float(np.linalg.norm(target - self.current())), speed, self.fps)
        pts = trapezoid_positions(self.current(), target, n, self.fps)
        self.positions.extend(list(pts))
        self.aperture.extend([self.aperture[-1]] * n)

    def hold(self, frames: int) -> None:
        self.positions.extend([self.current().copy()] * frames)
        self.aperture.extend([self.aperture[-1]] * frames)

    def set_aperture(self, target: float, frames: int) -> None:
        """Linear aperture ramp while holding position."""
        start = self.aperture[-1]
        for k in range(frames):
            self.positions.append(self.current().copy())
            self.aperture.append(start + (target - start) * (k + 1) / frames)

    def pad_to(self, frames: int) -> None:
        if self.frames < frames:
            self.hold(frames - self.frames)


def skeleton_sequence(positions: np.ndarray, rotation: np.ndarray, aperture: np.ndarray) -> np.ndarray:
    """21-keypoint hand skeleton for a gripper trajectory with fixed orientation.

    Wrist, thumb MCP/tip, and index MCP/tip are placed analytically; the
    remaining 16 keypoints are fixed-bone interpolations (unused downstream).
    """
    t = positions.shape[0]
    local = np.zeros((t, 21, 3))
    local[:, 0] = [0.0, -WRIST_BACK, 0.0]  # wrist
    local[:, 2] = [-MCP_HALF_SEP, -FINGER_LEN, 0.0]  # thumb MCP
    local[:, 5] = [MCP_HALF_SEP, -FINGER_LEN, 0.0]  # index MCP
    local[:, 4, 0] = -0.5 * aperture  # thumb tip
    local[:, 8, 0] = 0.5 * aperture  # index tip
    local[:, 1] = 0.5 * (local[:, 0] + local[:, 2])  # thumb CMC
    local[:, 3] = 0.5 * (local[:, 2] + local[:, 4])  # thumb IP
    local[:, 6] = local[:, 5] + (local[:, 8] - local[:, 5]) / 3.0  # index PIP
    local[:, 7] = local[:, 5] + 2.0 * (local[:, 8] - local[:, 5]) / 3.0  # index DIP
    for f, x_off in enumerate((0.047, 0.068, 0.088)):  # middle, ring, pinky
        base = np.array([x_off, -FINGER_LEN - 0.005 * (f + 1), 0.0])
        tip = base + np.array([0.0, FINGER_LEN - 0.012 * (f + 1), -0.01])
        for j in range(4):
            local[:, 9 + 4 * f + j] = base + (tip - base) * (j / 3.0)
    return positions[:, None, :] + local @ rotation.T


def object_ring(center: np.ndarray, yaw: float, radius: float, count: int) -> np.ndarray:
    """Contour keypoints: a ring whose mean is exactly the centroid."""
    angles = yaw + np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
    heights = 0.01 * np.cos(2.0 * angles) if count >= 4 else np.zeros(count)
    heights -= heights.mean()
    ring = np.stack(
        [
            center[0] + radius * np.cos(angles),
            center[1] + radius * np.sin(angles),
            center[2] + heights,
        ],
        axis=1,
    )
    return ring


def aperture_to_grasp(aperture: np.ndarray, d_min: float = 0.02, d_max: float = 0.10) -> np.ndarray:
    return np.clip((np.asarray(aperture) - d_min) / (d_max - d_min), 0.0, 1.0)
