"""1-D trajectory filters: Savitzky-Golay, axis EMA, gap fill, median, flicker."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from egoflow.errors import DegenerateFrame, SeriesTooShort
from egoflow.numerics.rotation import gram_schmidt_frame, quat_from_rotmat, quat_to_rotmat, slerp


@lru_cache(maxsize=32)
def _sg_coeffs(window: int, order: int) -> np.ndarray:
    # Value-at-center coefficients of the local least-squares polynomial fit.
    half = window // 2
    offsets = np.arange(-half, half + 1, dtype=float)
    design = np.vander(offsets, order + 1, increasing=True)
    # First row of the pseudo-inverse evaluates the fit at offset 0.
    return np.linalg.pinv(design)[0]


def savitzky_golay(series: np.ndarray, window: int = 21, order: int = 2) -> np.ndarray:
    """Least-squares local-polynomial smoothing with mirror-padded edges.

    Works on (T,) or (T, D) series. Interior samples within one polynomial
    piece of degree <= order are reproduced exactly; mirror padding keeps
    the output the same length as the input.
    """
    series = np.asarray(series, dtype=float)
    if window % 2 != 1:
        raise ValueError("window must be odd")
    if order >= window:
        raise ValueError("order must be smaller than window")
    n = series.shape[0]
    if n < window:
        raise SeriesTooShort(f"series length {n} < window {window}")
    half = window // 2
    coeffs = _sg_coeffs(window, order)
    flat = series.reshape(n, -1)
    out = np.empty_like(flat)
    for d in range(flat.shape[1]):
        padded = np.pad(flat[:, d], half, mode="reflect")
        out[:, d] = np.convolve(padded, coeffs[::-1], mode="valid")
    return out.reshape(series.shape)


def ema_axes(frames, alpha: float = 0.15) -> list[np.ndarray]:
    """Exponential moving average over (x, y) axis pairs with sign consistency.

    Each incoming axis is flipped when it opposes its own smoothed history,
    preventing spurious 180-degree frame flips; every output frame is
    re-orthonormalized through Gram-Schmidt.
    """
    smoothed_x = None
    smoothed_y = None
    out = []
    for x_axis, y_axis in frames:
        x_axis = np.asarray(x_axis, dtype=float)
        y_axis = np.asarray(y_axis, dtype=float)
        if smoothed_x is None:
            smoothed_x = x_axis.copy()
            smoothed_y = y_axis.copy()
        else:
            if np.dot(x_axis, smoothed_x) < 0.0:
                x_axis = -x_axis
            if np.dot(y_axis, smoothed_y) < 0.0:
                y_axis = -y_axis
            smoothed_x = (1.0 - alpha) * smoothed_x + alpha * x_axis
            smoothed_y = (1.0 - alpha) * smoothed_y + alpha * y_axis
        out.append(gram_schmidt_frame(smoothed_x, smoothed_y))
    return out


def interpolate_gaps(
    positions,
    rotations=None,
    max_gap: int = 10,
):
    """Fill missing samples bounded by present ones.

    positions: sequence of Optional arrays (any fixed shape); rotations:
    optional sequence of Optional 3x3 matrices, SLERP-filled. Gaps longer
    than max_gap (or unbounded at either end) stay missing and are reported.

    Returns (positions, rotations, fill_mask, unfilled) where unfilled is a
    list of (start, stop) index ranges left missing.
    """
    n = len(positions)
    pos_out = [None if p is None else np.asarray(p, dtype=float) for p in positions]
    rot_out = None
    if rotations is not None:
        rot_out = [None if r is None else np.asarray(r, dtype=float) for r in rotations]
    fill_mask = np.zeros(n, dtype=bool)
    unfilled: list[tuple[int, int]] = []

    present = [i for i in range(n) if pos_out[i] is not None]
    if not present:
        return pos_out, rot_out, fill_mask, [(0, n)] if n else []

    if present[0] > 0:
        unfilled.append((0, present[0]))
    if present[-1] < n - 1:
        unfilled.append((present[-1] + 1, n))

    for left, right in zip(present[:-1], present[1:]):
        gap = right - left - 1
        if gap == 0:
            continue
        if gap > max_gap:
            unfilled.append((left + 1, right))
            continue
        q0 = q1 = None
        if rot_out is not None and rot_out[left] is not None and rot_out[right] is not None:
            q0 = quat_from_rotmat(rot_out[left])
            q1 = quat_from_rotmat(rot_out[right])
        for j in range(left + 1, right):
            frac = (j - left) / (right - left)
            pos_out[j] = (1.0 - frac) * pos_out[left] + frac * pos_out[right]
            if q0 is not None:
                rot_out[j] = quat_to_rotmat(slerp(q0, q1, frac))
            fill_mask[j] = True
    unfilled.sort()
    return pos_out, rot_out, fill_mask, unfilled


def median_filter(series: np.ndarray, window: int) -> np.ndarray:
    """Order-statistic smoothing with mirror-padded edges."""
    series = np.asarray(series, dtype=float)
    if window % 2 != 1:
        raise ValueError("window must be odd")
    if series.shape[0] < window:
        raise SeriesTooShort(f"series length {series.shape[0]} < window {window}")
    half = window // 2
    padded = np.pad(series, half, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, window)
    return np.median(windows, axis=-1)


def flicker_suppress(series: np.ndarray, min_run: int) -> np.ndarray:
    """Remove runs shorter than min_run from a binary series.

    Short runs are absorbed into their left neighbor (the first run falls
    into the following one); repeats until every run is long enough or one
    run remains.
    """
    values = np.asarray(series).astype(bool).copy()
    if values.size == 0:
        return values
    while True:
        runs = _runs(values)
        if len(runs) <= 1:
            return values
        short = [(stop - start, idx) for idx, (start, stop, _) in enumerate(runs) if stop - start < min_run]
        if not short:
            return values
        _, idx = min(short)
        start, stop, _ = runs[idx]
        fill = runs[idx - 1][2] if idx > 0 else runs[idx + 1][2]
        values[start:stop] = fill


def _runs(values: np.ndarray) -> list[tuple[int, int, bool]]:
    runs = []
    start = 0
    for i in range(1, len(values) + 1):
        if i == len(values) or values[i] != values[start]:
            runs.append((start, i, bool(values[start])))
            start = i
    return runs
