"""Flow-matching objective with per-group weighting, plus the three
auxiliary objectives (object motion, 2D trace, latent consistency)."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from egoflow.errors import ShapeMismatch

CHUNK_STEPS = 50
ACTION_DIM = 20
POS_DIMS = (0, 1, 2, 10, 11, 12)
ROT_DIMS = (3, 4, 5, 6, 7, 8, 13, 14, 15, 16, 17, 18)
GRASP_DIMS = (9, 19)
GRASP_LOGIT = 4.0  # chunk target logit for a closed grasp (open = -4)
# Flow time is sampled on [0, FLOW_T_MAX]: the truncation keeps the analytic
# 1/(1-t) drift bounded and exactly covers the 20-step Euler grid.
FLOW_T_MAX = 0.95


@dataclass(frozen=True)
class LossWeights:
    w_p: float = 5.0
    w_r: float = 1.0
    w_g: float = 10.0
    lambda_om: float = 1.0
    lambda_2d: float = 1.0
    lambda_lc: float = 1.0
    w_f: float = 20.0  # 2D-trace internal weight
    w_c: float = 0.5  # latent-consistency internal weight, in [0.1, 1.0]


def fm_interpolate(x0: torch.Tensor, x1: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """Linear path x_t = (1 - t) x0 + t x1; t broadcast over trailing dims."""
    while t.dim() < x0.dim():
        t = t.unsqueeze(-1)
    return (1.0 - t) * x0 + t * x1


def _group_mse(err: torch.Tensor, dims) -> torch.Tensor:
    return err[..., list(dims)].pow(2).mean()


def fm_loss(v_pred: torch.Tensor, x0: torch.Tensor, x1: torch.Tensor, w: LossWeights):
    """Weighted velocity-prediction MSE; returns (total, components dict).

    Reduction: mean over batch, horizon, and in-group dims, so a unit error
    on every channel of a group contributes exactly its weight.
    """
    if v_pred.shape != x0.shape or x0.shape != x1.shape:
        raise ShapeMismatch(f"{tuple(v_pred.shape)} vs {tuple(x0.shape)} vs {tuple(x1.shape)}")
    err = v_pred - (x1 - x0)
    mse_p = _group_mse(err, POS_DIMS)
    mse_r = _group_mse(err, ROT_DIMS)
    mse_g = _group_mse(err, GRASP_DIMS)
    total = w.w_p * mse_p + w.w_r * mse_r + w.w_g * mse_g
    return total, {"fm_pos": mse_p, "fm_rot": mse_r, "fm_grasp": mse_g}


def _masked_mse(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    """MSE over elements selected by a broadcastable mask.

    The mask must already be shaped so it broadcasts against the squared
    error (callers insert singleton axes for the trailing dims).
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{tuple(pred.shape)} vs {tuple(target.shape)}")
    sq = (pred - target).pow(2)
    if mask is None:
        return sq.mean()
    mask = mask.to(sq.dtype).expand_as(sq)
    denom = mask.sum()
    if denom <= 0:
        return sq.sum() * 0.0
    return (sq * mask).sum() / denom


def aux_losses(predictions: dict, targets: dict, w: LossWeights):
    """(L_OM, L_2D, L_LC) with their documented internal weights applied.

    predictions/targets carry:
      om: (B, K, 9) future manipulated-object poses, mask (B,)
      trace2d: (B, K, 3, 2) normalized image coords, mask (B, 3)
      lc: (B, 2, 29) future hand tokens, mask (B, 2)
    """
    om_pred, om_tgt = predictions["om"], targets["om"]
    if om_pred.shape != om_tgt.shape:
        raise ShapeMismatch(f"om {tuple(om_pred.shape)} vs {tuple(om_tgt.shape)}")
    om_mask = targets.get("om_mask")
    if om_mask is not None:
        om_mask = om_mask.reshape(-1, 1, 1)  # (B,) over (B, K, dims)
    l_om = 0.5 * w.w_p * _masked_mse(om_pred[..., :3], om_tgt[..., :3], om_mask) + 0.5 * w.w_r * _masked_mse(
        om_pred[..., 3:9], om_tgt[..., 3:9], om_mask
    )
    tr_mask = targets.get("trace2d_mask")
    if tr_mask is not None:
        tr_mask = tr_mask.reshape(tr_mask.shape[0], 1, -1, 1)  # (B, 3) over (B, K, 3, 2)
    l_2d = w.w_f * _masked_mse(predictions["trace2d"], targets["trace2d"], tr_mask)
    lc_mask = targets.get("lc_mask")
    if lc_mask is not None:
        lc_mask = lc_mask.reshape(lc_mask.shape[0], -1, 1)  # (B, 2) over (B, 2, 29)
    l_lc = w.w_c * _masked_mse(predictions["lc"], targets["lc"], lc_mask)
    return l_om, l_2d, l_lc


def total_loss(fm: torch.Tensor, aux: tuple, w: LossWeights) -> torch.Tensor:
    """L = L_FM + lambda_OM L_OM + lambda_2D L_2D + lambda_LC L_LC."""
    l_om, l_2d, l_lc = aux
    return fm + w.lambda_om * l_om + w.lambda_2d * l_2d + w.lambda_lc * l_lc


def region_attention_weight(u, v, u0, v0, sigma):
    """Gaussian spotlight multiplied into raster attention logits."""
    if isinstance(u, torch.Tensor) or isinstance(u0, torch.Tensor):
        return torch.exp(-((u - u0) ** 2 + (v - v0) ** 2) / (2.0 * sigma**2))
    import numpy as np

    return float(np.exp(-((u - u0) ** 2 + (v - v0) ** 2) / (2.0 * sigma**2)))
