"""Training loop: AdamW, warmup + cosine decay, gradient clipping, weight EMA.

Deterministic under a fixed seed: single-threaded torch, one numpy
generator for batch sampling/augmentation, one torch generator for noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from egoflow.errors import EmptyDataset
from egoflow.ict import NormStats
from egoflow.policy.dataset import (
    AugmentConfig,
    RecordingTensors,
    TrainSample,
    inject_state_noise,
    sample_at,
)
from egoflow.policy.losses import FLOW_T_MAX, LossWeights, aux_losses, fm_interpolate, fm_loss, total_loss
from egoflow.policy.network import NetConfig, PolicyNet
from egoflow.policy.ot import ot_pair_assignment


@dataclass
class TrainConfig:
    base_lr: float = 1e-4
    warmup_steps: int = 200
    min_lr_ratio: float = 0.05
    batch_size: int = 32
    epochs: int = 400
    max_steps: int | None = None
    grad_clip: float = 1.0
    weight_decay: float = 0.01
    ema_decay: float = 0.999
    state_noise: dict = field(default_factory=lambda: {"pos": 0.01, "rot": 0.005, "grasp": 0.0})
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    ot_cfm: bool = False
    seed: int = 0
    val_fraction: float = 0.1
    val_every: int = 250
    log_every: int = 50
    weights: LossWeights = field(default_factory=LossWeights)
    net: NetConfig = field(default_factory=NetConfig)


@dataclass
class TrainResult:
    net: PolicyNet
    ema_params: dict
    stats: NormStats
    config: TrainConfig
    history: list
    final_val_fm: float
    steps: int

    def ema_net(self) -> PolicyNet:
        net = PolicyNet(self.net.cfg)
        net.load_state_dict({k: v.clone() for k, v in self.ema_params.items()})
        net.eval()
        return net


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup then cosine decay to min_lr_ratio of the base rate."""
    if step < cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    span = max(total_steps - cfg.warmup_steps, 1)
    progress = min((step - cfg.warmup_steps) / span, 1.0)
    return cfg.base_lr * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * 0.5 * (1.0 + math.cos(math.pi * progress)))


def collate(samples: list[TrainSample], dtype=torch.float32) -> dict:
    """Stack samples into tensors, padding entity counts with absent slots."""
    max_e = max(s.tokens.shape[0] for s in samples)
    b = len(samples)
    tokens = np.zeros((b, max_e, samples[0].tokens.shape[1]), dtype=np.float32)
    slots = np.zeros((b, max_e), dtype=np.int64)
    present = np.zeros((b, max_e), dtype=bool)
    for i, s in enumerate(samples):
        e = s.tokens.shape[0]
        tokens[i, :e] = s.tokens
        slots[i, :e] = s.slots
        present[i, :e] = s.present
    batch = {
        "tokens": torch.from_numpy(tokens).to(dtype),
        "slots": torch.from_numpy(slots),
        "present": torch.from_numpy(present),
        "chunk": torch.from_numpy(np.stack([s.chunk for s in samples])).to(dtype),
        "om": torch.from_numpy(np.stack([s.om for s in samples])).to(dtype),
        "om_mask": torch.tensor([s.om_mask for s in samples], dtype=dtype),
        "trace2d": torch.from_numpy(np.stack([s.trace2d for s in samples])).to(dtype),
        "trace2d_mask": torch.from_numpy(np.stack([s.trace2d_mask for s in samples])).to(dtype),
        "lc": torch.from_numpy(np.stack([s.lc for s in samples])).to(dtype),
        "lc_mask": torch.from_numpy(np.stack([s.lc_mask for s in samples])).to(dtype),
        "anchor_uv": torch.from_numpy(np.stack([s.anchor_uv for s in samples])).to(dtype),
    }
    if samples[0].raster is not None:
        batch["raster"] = torch.from_numpy(np.stack([s.raster for s in samples])).to(dtype)
    return batch


def compute_losses(net: PolicyNet, batch: dict, x0: torch.Tensor, t: torch.Tensor, w: LossWeights):
    """Total Eq.-style composite loss and its components for one batch."""
    x1 = batch["chunk"]
    x_t = fm_interpolate(x0, x1, t)
    raster = batch.get("raster")
    v = net(x_t, t, batch["tokens"], batch["slots"], batch["present"], raster, batch.get("anchor_uv"))
    fm, comps = fm_loss(v, x0, x1, w)
    preds = net.aux_forward(batch["tokens"], batch["slots"], batch["present"], raster, batch.get("anchor_uv"))
    targets = {
        "om": batch["om"],
        "om_mask": batch["om_mask"],
        "trace2d": batch["trace2d"],
        "trace2d_mask": batch["trace2d_mask"],
        "lc": batch["lc"],
        "lc_mask": batch["lc_mask"],
    }
    aux = aux_losses(preds, targets, w)
    total = total_loss(fm, aux, w)
    comps = dict(comps)
    comps.update({"fm": fm, "om": aux[0], "2d": aux[1], "lc": aux[2]})
    return total, comps


def _val_batches(val_pool, cfg: TrainConfig):
    """Fixed validation batches with frozen (t, x0) draws for bit-stable loss."""
    gen = torch.Generator().manual_seed(cfg.seed + 7919)
    batches = []
    for i in range(0, len(val_pool), cfg.batch_size):
        chunk = val_pool[i : i + cfg.batch_size]
        batch = collate(chunk)
        b = batch["chunk"].shape[0]
        t = torch.rand(b, generator=gen) * FLOW_T_MAX
        x0 = torch.randn(batch["chunk"].shape, generator=gen)
        batches.append((batch, x0, t))
    return batches


def validate_fm(net: PolicyNet, val_batches, w: LossWeights) -> float:
    """Mean weighted FM loss over the frozen validation set."""
    net.eval()
    losses = []
    with torch.no_grad():
        for batch, x0, t in val_batches:
            x_t = fm_interpolate(x0, batch["chunk"], t)
            v = net(x_t, t, batch["tokens"], batch["slots"], batch["present"], batch.get("raster"), batch.get("anchor_uv"))
            fm, _ = fm_loss(v, x0, batch["chunk"], w)
            losses.append(float(fm))
    net.train()
    return float(np.mean(losses))


def _draw_samples(pool, idx, rng, cfg: TrainConfig):
    out = []
    for i in idx:
        item = pool[i]
        if isinstance(item, TrainSample):
            sample = item
        else:
            rt, t = item
            sample = sample_at(rt, t, rng=rng, augment=cfg.augment, with_raster=cfg.net.use_raster)
        out.append(sample)
    return out


def train(cfg: TrainConfig, data, stats: NormStats) -> TrainResult:
    """Train the velocity field; `data` is a list of RecordingTensors (full
    augmentation path) or prebuilt TrainSamples."""
    pool = []
    for item in data:
        if isinstance(item, RecordingTensors):
            pool.extend((item, int(t)) for t in item.selected)
        else:
            pool.append(item)
    if not pool:
        raise EmptyDataset("no training samples")

    torch.set_num_threads(1)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    noise_gen = torch.Generator().manual_seed(cfg.seed + 104729)

    order = rng.permutation(len(pool))
    n_val = max(1, int(round(cfg.val_fraction * len(pool)))) if len(pool) > 1 else 0
    val_idx = order[:n_val]
    train_idx = order[n_val:] if n_val < len(pool) else order
    val_pool = [_materialize(pool[i]) for i in val_idx]
    val_batches = _val_batches(val_pool, cfg) if val_pool else []

    net = PolicyNet(cfg.net)
    net.train()
    opt = torch.optim.AdamW(net.parameters(), lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    ema = {k: v.detach().clone() for k, v in net.state_dict().items()}

    steps_per_epoch = max(1, math.ceil(len(train_idx) / cfg.batch_size))
    total_steps = cfg.max_steps if cfg.max_steps is not None else cfg.epochs * steps_per_epoch
    history = []

    for step in range(total_steps):
        lr = lr_at(step, total_steps, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        batch_ids = rng.integers(0, len(train_idx), size=min(cfg.batch_size, len(train_idx)))
        samples = _draw_samples(pool, [train_idx[i] for i in batch_ids], rng, cfg)
        batch = collate(samples)
        noisy = inject_state_noise(batch["tokens"].numpy(), cfg.state_noise, rng)
        batch["tokens"] = torch.from_numpy(noisy)

        b = batch["chunk"].shape[0]
        t = torch.rand(b, generator=noise_gen) * FLOW_T_MAX
        x0 = torch.randn(batch["chunk"].shape, generator=noise_gen)
        if cfg.ot_cfm and b > 1:
            assign = ot_pair_assignment(x0.numpy(), batch["chunk"].numpy())
            inverse = np.empty_like(assign)
            inverse[assign] = np.arange(assign.size)
            x0 = x0[torch.from_numpy(inverse)]

        total, comps = compute_losses(net, batch, x0, t, cfg.weights)
        opt.zero_grad(set_to_none=True)
        total.backward()
        torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
        opt.step()
        with torch.no_grad():
            state = net.state_dict()
            for k, v in ema.items():
                if v.dtype.is_floating_point:
                    v.mul_(cfg.ema_decay).add_(state[k], alpha=1.0 - cfg.ema_decay)
                else:
                    v.copy_(state[k])

        if step % cfg.log_every == 0 or step == total_steps - 1:
            row = {"step": step, "lr": lr, "total": float(total.detach())}
            row.update({k: float(v.detach()) for k, v in comps.items()})
            if val_batches and (step % cfg.val_every == 0 or step == total_steps - 1):
                row["val_fm"] = validate_fm(net, val_batches, cfg.weights)
            history.append(row)

    final_val = validate_fm(net, val_batches, cfg.weights) if val_batches else float("nan")
    return TrainResult(
        net=net,
        ema_params=ema,
        stats=stats,
        config=cfg,
        history=history,
        final_val_fm=final_val,
        steps=total_steps,
    )


def _materialize(item):
    if isinstance(item, TrainSample):
        return item
    rt, t = item
    return sample_at(rt, t)


def grad_check(
    net: PolicyNet,
    batch: dict,
    weights: LossWeights | None = None,
    eps: float = 1e-5,
    num_params: int = 200,
    seed: int = 0,
    corrupt: bool = False,
) -> float:
    """Max relative error between autograd and central finite differences.

    Runs in float64. `corrupt` scales one analytic gradient entry as a
    negative control. The relative error uses a floor tied to the overall
    gradient scale so near-zero entries do not divide by FD noise.
    """
    net = net.double()
    batch = {k: (v.double() if v.dtype.is_floating_point else v) for k, v in batch.items()}
    w = weights or LossWeights()
    gen = torch.Generator().manual_seed(seed)
    t = torch.rand(batch["chunk"].shape[0], generator=gen, dtype=torch.float64) * FLOW_T_MAX
    x0 = torch.randn(batch["chunk"].shape, generator=gen, dtype=torch.float64)

    def loss_value() -> torch.Tensor:
        total, _ = compute_losses(net, batch, x0, t, w)
        return total

    net.zero_grad(set_to_none=True)
    loss_value().backward()
    params = [p for p in net.parameters() if p.requires_grad]
    grads = [p.grad.detach().clone() for p in params]
    g_scale = max(float(torch.cat([g.abs().flatten() for g in grads]).max()), 1e-12)

    rng = np.random.default_rng(seed)
    flat_sizes = [p.numel() for p in params]
    total_params = sum(flat_sizes)
    picks = rng.choice(total_params, size=min(num_params, total_params), replace=False)

    max_rel = 0.0
    with torch.no_grad():
        for flat_idx in picks:
            pi = 0
            while flat_idx >= flat_sizes[pi]:
                flat_idx -= flat_sizes[pi]
                pi += 1
            p = params[pi]
            idx = np.unravel_index(flat_idx, p.shape)
            orig = p[idx].item()
            p[idx] = orig + eps
            up = float(loss_value())
            p[idx] = orig - eps
            down = float(loss_value())
            p[idx] = orig
            fd = (up - down) / (2.0 * eps)
            an = grads[pi][idx].item()
            if corrupt:
                an = an * 1.5 + 0.1 * g_scale
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-3 * g_scale)
            max_rel = max(max_rel, rel)
    return max_rel
