"""Training-sample construction from preprocessed recordings.

One sample per selected frame: the token observation at t, the normalized
bimanual action chunk over t+1..t+K (terminal-hold padded), and the three
auxiliary targets (object motion, 2D trace, future hand tokens). Per-frame
state is tensorized once per recording so samples are cheap index gathers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from egoflow.errors import RecordingTooShort
from egoflow.ict import (
    GRASP_CHANNEL,
    OBJECT_GRASP_SENTINEL,
    POS_CHANNELS,
    ROT_CHANNELS,
    TOKEN_DIM,
    TYPE_HAND,
    TYPE_OBJECT,
    NormStats,
)
from egoflow.numerics.camera import projection_matrix
from egoflow.pipeline import PreprocessedRecording
from egoflow.policy.losses import ACTION_DIM, CHUNK_STEPS, GRASP_LOGIT
from egoflow.policy.network import RASTER_CHANNELS, RASTER_SIZE


@dataclass
class TrainSample:
    tokens: np.ndarray  # (E, 29) float32
    slots: np.ndarray  # (E,) int64
    present: np.ndarray  # (E,) bool
    chunk: np.ndarray  # (K, 20) float32
    om: np.ndarray  # (K, 9) float32
    om_mask: float
    trace2d: np.ndarray  # (K, 3, 2) float32
    trace2d_mask: np.ndarray  # (3,) float32
    lc: np.ndarray  # (2, 29) float32
    lc_mask: np.ndarray  # (2,) float32
    anchor_uv: np.ndarray  # (2,) float32
    raster: np.ndarray | None = None
    rec_id: str = ""
    frame: int = -1


@dataclass
class AugmentConfig:
    substep_prob: float = 0.5
    sigma_pos: float = 1e-3  # meters
    sigma_rot_deg: float = 0.5  # degrees, truncated at 2 sigma
    enabled: bool = True


@dataclass
class RecordingTensors:
    """Per-frame state of one recording as flat arrays (frame-indexed)."""

    rec: PreprocessedRecording
    stats: NormStats
    chunk_steps: int
    tokens: np.ndarray  # (T, E, 29) float32
    slots: np.ndarray  # (E,)
    present: np.ndarray  # (E,)
    actions: np.ndarray  # (T, 20) float64 packed bimanual rows
    hand_pos: np.ndarray  # (T, 2, 3) world
    om_rows: np.ndarray  # (T, 9)
    om_mask: float
    trace_rows: np.ndarray  # (T, 3, 2)
    trace_mask: np.ndarray  # (3,)
    anchor_rows: np.ndarray  # (T, 2)
    selected: np.ndarray  # (S,)

    @property
    def num_frames(self) -> int:
        return self.actions.shape[0]


def _batch_gram_schmidt(r6: np.ndarray) -> np.ndarray:
    """Vectorized normalize-then-Gram-Schmidt over (..., 6) arrays."""
    x = r6[..., :3]
    y = r6[..., 3:]
    x = x / np.linalg.norm(x, axis=-1, keepdims=True)
    y = y - np.sum(y * x, axis=-1, keepdims=True) * x
    y = y / np.linalg.norm(y, axis=-1, keepdims=True)
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)


def _identity_rows(stats: NormStats) -> np.ndarray:
    return np.concatenate([-stats.mean / stats.std, [1, 0, 0, 0, 1, 0]])


def _rel_flatten(ref_rot_t: np.ndarray, ref_trans: np.ndarray, rot: np.ndarray, trans: np.ndarray, stats: NormStats) -> np.ndarray:
    """flatten_se3_9d of ref^-1 @ (rot, trans), vectorized over leading dims.

    Frames whose pose equals the reference bitwise emit an exact identity
    block (no rounding noise), matching the scalar encode path.
    """
    rel_rot = np.einsum("ij,...jk->...ik", ref_rot_t, rot)
    rel_trans = np.einsum("ij,...j->...i", ref_rot_t, trans - ref_trans)
    norm_t = (rel_trans - stats.mean) / stats.std
    out = np.concatenate([norm_t, rel_rot[..., :, 0], rel_rot[..., :, 1]], axis=-1)
    same = np.all(rot == ref_rot_t.T, axis=(-2, -1)) & np.all(trans == ref_trans, axis=-1)
    if same.any():
        out[same] = _identity_rows(stats)
    return out


def _local_flatten(base_rot: np.ndarray, base_trans: np.ndarray, rot: np.ndarray, trans: np.ndarray, stats: NormStats) -> np.ndarray:
    """flatten_se3_9d of base^-1 @ (rot, trans) with per-frame bases."""
    rel_rot = np.einsum("...ji,...jk->...ik", base_rot, rot)
    rel_trans = np.einsum("...ji,...j->...i", base_rot, trans - base_trans)
    norm_t = (rel_trans - stats.mean) / stats.std
    out = np.concatenate([norm_t, rel_rot[..., :, 0], rel_rot[..., :, 1]], axis=-1)
    same = np.all(rot == base_rot, axis=(-2, -1)) & np.all(trans == base_trans, axis=-1)
    if same.any():
        out[same] = _identity_rows(stats)
    return out


def _timeline_arrays(rec: PreprocessedRecording, side: str):
    """Forward/backward-filled pose arrays plus grasp for one hand."""
    total = rec.num_frames
    timeline = rec.hands[side]
    rot = np.tile(np.eye(3), (total, 1, 1))
    pos = np.zeros((total, 3))
    grasp = np.ones(total)
    last = None
    for t in range(total):
        if timeline.poses[t] is not None:
            last = t
        if last is not None:
            rot[t] = timeline.poses[last].rot
            pos[t] = timeline.poses[last].trans
            grasp[t] = timeline.grasp_bin[last]
    first = next((t for t in range(total) if timeline.poses[t] is not None), None)
    if first is not None:
        rot[:first] = timeline.poses[first].rot
        pos[:first] = timeline.poses[first].trans
        grasp[:first] = timeline.grasp_bin[first]
    return rot, pos, grasp


def _project_rows(rec: PreprocessedRecording, cam_idx: int, points: np.ndarray):
    """Normalized [0,1]^2 projections of (...,3) points through one camera."""
    p = projection_matrix(rec.intrinsics, rec.camera_poses[cam_idx])
    hom = points @ p[:, :3].T + p[:, 3]
    depth = hom[..., 2]
    ok = depth > 1e-6
    uv = np.full(points.shape[:-1] + (2,), 0.5)
    uv[ok] = hom[ok][:, :2] / depth[ok][:, None]
    uv[..., 0] /= rec.intrinsics.width
    uv[..., 1] /= rec.intrinsics.height
    return np.clip(uv, 0.0, 1.0), ok


def tensorize_recording(
    rec: PreprocessedRecording,
    stats: NormStats,
    chunk_steps: int = CHUNK_STEPS,
) -> RecordingTensors:
    total = rec.num_frames
    ref_rot_t = rec.ref_pose.rot.T
    ref_trans = rec.ref_pose.trans

    hand_rot = np.zeros((total, 2, 3, 3))
    hand_pos = np.zeros((total, 2, 3))
    hand_grasp = np.ones((total, 2))
    hand_any = np.zeros(2, dtype=bool)
    for h, side in enumerate(("left", "right")):
        hand_rot[:, h], hand_pos[:, h], hand_grasp[:, h] = _timeline_arrays(rec, side)
        hand_any[h] = bool(rec.hands[side].present.any())

    oids = sorted(rec.object_poses)
    n_obj = len(oids)
    obj_rot = np.zeros((total, n_obj, 3, 3))
    obj_pos = np.zeros((total, n_obj, 3))
    for m, oid in enumerate(oids):
        for t in range(total):
            pose = rec.object_poses[oid][t]
            obj_rot[t, m] = pose.rot
            obj_pos[t, m] = pose.trans

    # Packed action rows: [LH 9D | LH grasp logit | RH 9D | RH grasp logit].
    actions = np.empty((total, ACTION_DIM))
    for h in range(2):
        rows = _rel_flatten(ref_rot_t, ref_trans, hand_rot[:, h], hand_pos[:, h], stats)
        logits = np.where(hand_grasp[:, h] < 0.5, GRASP_LOGIT, -GRASP_LOGIT)
        actions[:, 10 * h : 10 * h + 9] = rows
        actions[:, 10 * h + 9] = logits

    # Token timeline: entities are LH, RH, then objects by id.
    n_ent = 2 + n_obj
    ent_rot = np.concatenate([hand_rot, obj_rot], axis=1)
    ent_pos = np.concatenate([hand_pos, obj_pos], axis=1)
    tokens = np.empty((total, n_ent, TOKEN_DIM))
    tokens[:, :2, 0] = TYPE_HAND
    tokens[:, 2:, 0] = TYPE_OBJECT
    identity_block = _identity_rows(stats)
    ent_present = np.concatenate([hand_any, np.ones(n_obj, dtype=bool)])
    for e in range(n_ent):
        if not ent_present[e]:
            tokens[:, e, 1:28] = np.tile(identity_block, 3)
            continue
        tokens[:, e, 1:10] = _rel_flatten(ref_rot_t, ref_trans, ent_rot[:, e], ent_pos[:, e], stats)
        for h, col in ((0, slice(10, 19)), (1, slice(19, 28))):
            if hand_any[h]:
                tokens[:, e, col] = _local_flatten(ent_rot[:, e], ent_pos[:, e], hand_rot[:, h], hand_pos[:, h], stats)
            else:
                tokens[:, e, col] = identity_block
    for h in range(2):
        if hand_any[h]:
            tokens[:, h, GRASP_CHANNEL] = np.where(hand_grasp[:, h] >= 0.5, 1.0, 0.0)
        else:
            tokens[:, h, GRASP_CHANNEL] = OBJECT_GRASP_SENTINEL
    tokens[:, 2:, GRASP_CHANNEL] = OBJECT_GRASP_SENTINEL
    slots = np.concatenate([[0, 1], [2 + oid for oid in oids]]).astype(np.int64)
    present = ent_present

    # Auxiliary target rows projected through the reference-frame camera.
    cam_idx = int(rec.selected[0]) if rec.selected.size else 0
    om_rows = np.zeros((total, 9))
    om_mask = 0.0
    trace_rows = np.full((total, 3, 2), 0.5)
    trace_mask = np.array([float(hand_any[0]), float(hand_any[1]), 0.0])
    for h in range(2):
        uv, _ = _project_rows(rec, cam_idx, hand_pos[:, h])
        trace_rows[:, h] = uv
    if rec.manip_object is not None:
        m = oids.index(rec.manip_object)
        om_rows = _rel_flatten(ref_rot_t, ref_trans, obj_rot[:, m], obj_pos[:, m], stats)
        om_mask = 1.0
        uv, _ = _project_rows(rec, cam_idx, obj_pos[:, m])
        trace_rows[:, 2] = uv
        trace_mask[2] = 1.0
        anchor_rows, _ = _project_rows(rec, cam_idx, obj_pos[:, m])
    else:
        anchor_rows, _ = _project_rows(rec, cam_idx, hand_pos[:, 1])

    return RecordingTensors(
        rec=rec,
        stats=stats,
        chunk_steps=chunk_steps,
        tokens=tokens.astype(np.float32),
        slots=slots,
        present=present,
        actions=actions,
        hand_pos=hand_pos,
        om_rows=om_rows,
        om_mask=om_mask,
        trace_rows=trace_rows,
        trace_mask=trace_mask,
        anchor_rows=anchor_rows,
        selected=rec.selected.copy(),
    )


def _future_index(t: int, total: int, chunk_steps: int) -> np.ndarray:
    """Chunk frame indices t+1..t+K with terminal-hold clamping."""
    return np.minimum(t + 1 + np.arange(chunk_steps), total - 1)


def _snap_grasp(chunk: np.ndarray) -> np.ndarray:
    chunk[..., 9] = np.where(chunk[..., 9] >= 0.0, GRASP_LOGIT, -GRASP_LOGIT)
    chunk[..., 19] = np.where(chunk[..., 19] >= 0.0, GRASP_LOGIT, -GRASP_LOGIT)
    return chunk


def _reproject_rot_blocks(arr: np.ndarray, block_starts) -> np.ndarray:
    for s in block_starts:
        rot = _batch_gram_schmidt(arr[..., s : s + 6])
        arr[..., s : s + 3] = rot[..., :, 0]
        arr[..., s + 3 : s + 6] = rot[..., :, 1]
    return arr


def sample_at(
    rt: RecordingTensors,
    t: int,
    rng: np.random.Generator | None = None,
    augment: AugmentConfig | None = None,
    with_raster: bool = False,
) -> TrainSample:
    """Materialize the sample anchored at frame t, optionally augmented.

    Sub-step interpolation blends frames t and t+1 at a uniform alpha
    (translations linearly, rotations by 6D blend-then-reproject); target
    pose noise is always applied when an rng is given.
    """
    total = rt.num_frames
    k = rt.chunk_steps
    aug = augment if (augment and augment.enabled and rng is not None) else None
    alpha = 0.0
    if aug is not None and rng.uniform() < aug.substep_prob:
        alpha = float(rng.uniform())

    idx = _future_index(t, total, k)
    if alpha > 0.0:
        nxt = np.minimum(idx + 1, total - 1)
        chunk = (1.0 - alpha) * rt.actions[idx] + alpha * rt.actions[nxt]
        chunk = _snap_grasp(chunk)
        chunk = _reproject_rot_blocks(chunk, (3, 13))
        tok_a, tok_b = rt.tokens[t].astype(float), rt.tokens[min(t + 1, total - 1)].astype(float)
        tokens = (1.0 - alpha) * tok_a + alpha * tok_b
        tokens = _reproject_rot_blocks(tokens, (4, 13, 22))
        tokens[:, 0] = tok_a[:, 0]
        tokens[:, GRASP_CHANNEL] = tok_a[:, GRASP_CHANNEL] if alpha < 0.5 else tok_b[:, GRASP_CHANNEL]
        om = (1.0 - alpha) * rt.om_rows[idx] + alpha * rt.om_rows[nxt]
        om = _reproject_rot_blocks(om, (3,))
        trace = (1.0 - alpha) * rt.trace_rows[idx] + alpha * rt.trace_rows[nxt]
        lc_i = min(t + k, total - 1)
        lc = (1.0 - alpha) * rt.tokens[lc_i].astype(float) + alpha * rt.tokens[min(lc_i + 1, total - 1)].astype(float)
        lc = _reproject_rot_blocks(lc, (4, 13, 22))[:2]
        anchor_uv = (1.0 - alpha) * rt.anchor_rows[t] + alpha * rt.anchor_rows[min(t + 1, total - 1)]
    else:
        chunk = rt.actions[idx].copy()
        tokens = rt.tokens[t].astype(float)
        om = rt.om_rows[idx].copy()
        trace = rt.trace_rows[idx].copy()
        lc = rt.tokens[min(t + k, total - 1), :2].astype(float)
        anchor_uv = rt.anchor_rows[t].copy()

    if aug is not None:
        # Target pose noise: 1 mm position (in normalized units), truncated
        # small-angle rotation noise composed onto the 6D blocks.
        if aug.sigma_pos > 0:
            pos_sigma = aug.sigma_pos / rt.stats.std
            for s in (0, 10):
                chunk[:, s : s + 3] += rng.normal(0.0, 1.0, size=(k, 3)) * pos_sigma
        if aug.sigma_rot_deg > 0:
            sig = np.deg2rad(aug.sigma_rot_deg)
            for s in (3, 13):
                rot = _batch_gram_schmidt(chunk[:, s : s + 6])
                angle = np.clip(rng.normal(0.0, sig, size=k), -2 * sig, 2 * sig)
                axis = rng.normal(size=(k, 3))
                axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
                kmat = np.zeros((k, 3, 3))
                kmat[:, 0, 1], kmat[:, 0, 2] = -axis[:, 2], axis[:, 1]
                kmat[:, 1, 0], kmat[:, 1, 2] = axis[:, 2], -axis[:, 0]
                kmat[:, 2, 0], kmat[:, 2, 1] = -axis[:, 1], axis[:, 0]
                r_noise = (
                    np.eye(3)[None]
                    + np.sin(angle)[:, None, None] * kmat
                    + (1 - np.cos(angle))[:, None, None] * (kmat @ kmat)
                )
                rot = r_noise @ rot
                chunk[:, s : s + 3] = rot[:, :, 0]
                chunk[:, s + 3 : s + 6] = rot[:, :, 1]

    lc_mask = rt.present[:2].astype(np.float32).copy()
    raster = render_raster_from_tensors(rt, t) if with_raster else None
    return TrainSample(
        tokens=tokens.astype(np.float32),
        slots=rt.slots,
        present=rt.present,
        chunk=chunk.astype(np.float32),
        om=om.astype(np.float32),
        om_mask=rt.om_mask,
        trace2d=trace.astype(np.float32),
        trace2d_mask=rt.trace_mask.astype(np.float32),
        lc=lc.astype(np.float32),
        lc_mask=lc_mask,
        anchor_uv=anchor_uv.astype(np.float32),
        raster=raster,
        rec_id=rt.rec.rec_id,
        frame=int(t),
    )


def render_raster_from_tensors(rt: RecordingTensors, t: int) -> np.ndarray:
    """Keypoint raster standing in for the RGB stream: projected gripper and
    object cells plus a grasp-state channel."""
    grid = np.zeros((RASTER_CHANNELS, RASTER_SIZE, RASTER_SIZE), dtype=np.float32)

    def paint(channel: int, uv: np.ndarray, value: float = 1.0) -> None:
        col = min(int(uv[0] * RASTER_SIZE), RASTER_SIZE - 1)
        row = min(int(uv[1] * RASTER_SIZE), RASTER_SIZE - 1)
        grid[channel, row, col] = max(grid[channel, row, col], value)

    for h in range(2):
        if rt.present[h]:
            paint(h, rt.trace_rows[t, h])
            closed = rt.tokens[t, h, GRASP_CHANNEL] < 0.5
            paint(3, rt.trace_rows[t, h], 1.0 if closed else 0.5)
    if rt.trace_mask[2] > 0:
        paint(2, rt.trace_rows[t, 2])
    return grid


def build_sample(
    rec: PreprocessedRecording,
    t: int,
    stats: NormStats,
    chunk_steps: int = CHUNK_STEPS,
    rng: np.random.Generator | None = None,
    augment: AugmentConfig | None = None,
    with_raster: bool = False,
) -> TrainSample:
    """Convenience scalar path: tensorize then index (tests, small corpora)."""
    rt = tensorize_recording(rec, stats, chunk_steps)
    return sample_at(rt, t, rng=rng, augment=augment, with_raster=with_raster)


def build_dataset(
    recs: list[PreprocessedRecording],
    stats: NormStats,
    chunk_steps: int = CHUNK_STEPS,
    stride: int = 1,
    with_raster: bool = False,
) -> list[TrainSample]:
    """Deterministic, un-augmented samples for every selected frame."""
    samples = []
    for rec in recs:
        rt = tensorize_recording(rec, stats, chunk_steps)
        for t in rt.selected[::stride]:
            samples.append(sample_at(rt, int(t), with_raster=with_raster))
    if not samples:
        raise RecordingTooShort("no training samples produced")
    return samples


def inject_state_noise(
    tokens: np.ndarray,
    sigmas: dict,
    rng: np.random.Generator,
) -> np.ndarray:
    """Additive Gaussian noise on hand-token channels only.

    sigmas: {"pos": s, "rot": s, "grasp": s} in token units; object tokens
    (type 0) are returned bit-unchanged.
    """
    tokens = np.asarray(tokens)
    out = tokens.copy()
    hand_mask = tokens[..., 0] == TYPE_HAND
    if not hand_mask.any():
        return out
    idx = np.where(hand_mask)
    n = idx[0].shape[0]
    noise = np.zeros((n, tokens.shape[-1]))
    if sigmas.get("pos", 0.0) > 0:
        noise[:, POS_CHANNELS] = rng.normal(0.0, sigmas["pos"], size=(n, POS_CHANNELS.size))
    if sigmas.get("rot", 0.0) > 0:
        noise[:, ROT_CHANNELS] = rng.normal(0.0, sigmas["rot"], size=(n, ROT_CHANNELS.size))
    if sigmas.get("grasp", 0.0) > 0:
        noise[:, GRASP_CHANNEL] = rng.normal(0.0, sigmas["grasp"], size=n)
    out[idx] = (out[idx].astype(float) + noise).astype(out.dtype)
    return out
