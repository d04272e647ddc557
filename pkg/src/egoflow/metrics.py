"""Trajectory metrics: jerk, idle fraction, coverage, success intervals."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from egoflow.errors import TooShort

IDLE_SPEED_THRESHOLD = 0.01  # m/s


def compute_jerk(positions: np.ndarray, dt: float):
    """Per-frame jerk magnitude via the third-order central difference.

    jerk(t) = (p(t+2) - 2 p(t+1) + 2 p(t-1) - p(t-2)) / (2 dt^3), defined on
    interior frames. Returns (per-frame magnitudes, summary dict).
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape[0] < 4:
        raise TooShort("jerk needs at least 4 frames")
    p = positions
    jerk = (p[4:] - 2.0 * p[3:-1] + 2.0 * p[1:-3] - p[:-4]) / (2.0 * dt**3)
    mags = np.linalg.norm(jerk, axis=-1)
    if mags.size == 0:
        summary = {"mean": 0.0, "p95": 0.0, "max": 0.0, "frames": 0}
    else:
        summary = {
            "mean": float(mags.mean()),
            "p95": float(np.percentile(mags, 95)),
            "max": float(mags.max()),
            "frames": int(mags.size),
        }
    return mags, summary


def compute_idle_fraction(positions: np.ndarray, dt: float, threshold: float = IDLE_SPEED_THRESHOLD) -> float:
    """Share of frames whose speed falls below the idle threshold."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape[0] < 2:
        raise TooShort("idle fraction needs at least 2 frames")
    speeds = np.linalg.norm(np.diff(positions, axis=0), axis=-1) / dt
    return float(np.mean(speeds < threshold))


def spatial_coverage(positions: np.ndarray) -> dict:
    """Workspace coverage of a trajectory: per-axis extent and bbox volume."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    extent = positions.max(axis=0) - positions.min(axis=0)
    return {
        "extent": extent.tolist(),
        "bbox_volume": float(np.prod(extent)),
        "std": positions.std(axis=0).tolist(),
    }


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 1.0
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * np.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def canonical_json(obj) -> str:
    """Deterministic JSON serialization (sorted keys, repr-exact floats)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]
