"""Velocity-field network: shared context encoder, FM head, auxiliary heads.

Reference desk-scale architecture: per-token linear embedding with entity
slot tags, mean-pooled, feeding a 3-layer MLP velocity head. A compact
transformer decoder over chunk steps is available behind `arch`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from egoflow.ict import TOKEN_DIM
from egoflow.policy.losses import ACTION_DIM, CHUNK_STEPS

MAX_SLOTS = 10
RASTER_SIZE = 32
RASTER_CHANNELS = 4
# Predicted transport endpoints are clamped far outside the data range so
# off-distribution states cannot blow up the analytic 1/(1-t) drift.
TARGET_CLAMP = 50.0


@dataclass(frozen=True)
class NetConfig:
    arch: str = "stepmlp"  # "stepmlp" | "mlp" | "transformer"
    ctx_dim: int = 64
    hidden: int = 256
    time_dim: int = 16
    chunk_steps: int = CHUNK_STEPS
    action_dim: int = ACTION_DIM
    use_raster: bool = False
    tf_layers: int = 6
    tf_heads: int = 8
    tf_dim: int = 384
    dropout: float = 0.05

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(d: dict) -> "NetConfig":
        return NetConfig(**d)


class SinusoidalTimeEmbed(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            torch.arange(half, dtype=t.dtype, device=t.device) * (-math.log(1000.0) / max(half - 1, 1))
        )
        args = t[:, None] * freqs[None, :] * 2.0 * math.pi
        return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class RasterEncoder(nn.Module):
    """Attention-pooling over raster cells with a Gaussian spotlight bias."""

    def __init__(self, out_dim: int, channels: int = RASTER_CHANNELS):
        super().__init__()
        self.cell_embed = nn.Linear(channels, out_dim)
        self.score = nn.Linear(out_dim, 1)
        self.log_sigma = nn.Parameter(torch.tensor(-1.0))
        grid = torch.stack(
            torch.meshgrid(
                torch.linspace(0.0, 1.0, RASTER_SIZE),
                torch.linspace(0.0, 1.0, RASTER_SIZE),
                indexing="xy",
            ),
            dim=-1,
        ).reshape(-1, 2)
        self.register_buffer("grid", grid)

    def forward(self, raster: torch.Tensor, anchor_uv: torch.Tensor) -> torch.Tensor:
        b = raster.shape[0]
        cells = raster.reshape(b, raster.shape[1], -1).transpose(1, 2)  # (B, HW, C)
        feats = torch.tanh(self.cell_embed(cells))
        logits = self.score(feats).squeeze(-1)
        sigma = torch.exp(self.log_sigma)
        d2 = ((self.grid[None].to(raster.dtype) - anchor_uv[:, None, :]) ** 2).sum(-1)
        spotlight = torch.exp(-d2 / (2.0 * sigma**2))
        attn = torch.softmax(logits * spotlight, dim=-1)
        return (attn[:, :, None] * feats).sum(dim=1)


class ContextEncoder(nn.Module):
    """Slot-tagged token embeddings, pooled per kind; optional raster stream.

    Hand tokens occupy fixed slots, so their raw values and embeddings are
    concatenated into the context undiluted; the variable-length object set
    is masked-mean pooled. Mean-pooling everything (the minimal variant)
    washes out the centimetre-level hand/object geometry the policy needs.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.token_embed = nn.Sequential(
            nn.Linear(TOKEN_DIM, cfg.ctx_dim),
            nn.SiLU(),
            nn.Linear(cfg.ctx_dim, cfg.ctx_dim),
        )
        self.slot_embed = nn.Embedding(MAX_SLOTS, cfg.ctx_dim)
        self.raster = RasterEncoder(cfg.ctx_dim) if cfg.use_raster else None
        self.out_dim = 3 * cfg.ctx_dim + 2 * TOKEN_DIM + (cfg.ctx_dim if cfg.use_raster else 0)

    def forward(self, tokens, slots, present, raster=None, anchor_uv=None):
        emb = self.token_embed(tokens) + self.slot_embed(slots)
        weights = present.to(emb.dtype)
        hand_w = weights[:, :2, None]
        hands = emb[:, :2] * hand_w
        raw_hands = tokens[:, :2] * hand_w
        obj_w = weights[:, 2:]
        denom = obj_w.sum(dim=1, keepdim=True).clamp(min=1.0)
        pooled_obj = (emb[:, 2:] * obj_w[:, :, None]).sum(dim=1) / denom
        parts = [
            hands.reshape(hands.shape[0], -1),
            raw_hands.reshape(hands.shape[0], -1),
            pooled_obj,
        ]
        if self.raster is not None:
            if raster is None:
                raster = torch.zeros(
                    tokens.shape[0], RASTER_CHANNELS, RASTER_SIZE, RASTER_SIZE,
                    dtype=tokens.dtype, device=tokens.device,
                )
            if anchor_uv is None:
                anchor_uv = torch.full((tokens.shape[0], 2), 0.5, dtype=tokens.dtype, device=tokens.device)
            parts.append(self.raster(raster, anchor_uv))
        return torch.cat(parts, dim=-1)


class AuxHeads(nn.Module):
    def __init__(self, ctx_dim: int, chunk_steps: int):
        super().__init__()
        self.k = chunk_steps
        self.om = nn.Sequential(nn.Linear(ctx_dim, 128), nn.SiLU(), nn.Linear(128, chunk_steps * 9))
        self.trace2d = nn.Sequential(nn.Linear(ctx_dim, 128), nn.SiLU(), nn.Linear(128, chunk_steps * 3 * 2))
        self.lc = nn.Sequential(nn.Linear(ctx_dim, 128), nn.SiLU(), nn.Linear(128, 2 * TOKEN_DIM))

    def forward(self, ctx: torch.Tensor) -> dict:
        b = ctx.shape[0]
        return {
            "om": self.om(ctx).reshape(b, self.k, 9),
            "trace2d": self.trace2d(ctx).reshape(b, self.k, 3, 2),
            "lc": self.lc(ctx).reshape(b, 2, TOKEN_DIM),
        }


class MlpVelocityHead(nn.Module):
    """Target-point parameterization with FiLM conditioning.

    The MLP predicts the transport endpoint and the velocity
    (x_hat1 - x_t) / (1 - t) is formed analytically: the optimal velocity
    is full-rank linear in x_t, and pulling the -x_t/(1-t) drift out of
    the network keeps it representable past the hidden bottleneck. The
    context modulates every hidden layer (scale + shift) rather than being
    concatenated once.
    """

    def __init__(self, cfg: NetConfig, ctx_dim: int):
        super().__init__()
        flat = cfg.chunk_steps * cfg.action_dim
        self.inp = nn.Linear(flat + cfg.time_dim + ctx_dim, cfg.hidden)
        self.hidden_layers = nn.ModuleList(
            [nn.Linear(cfg.hidden, cfg.hidden) for _ in range(2)]
        )
        self.films = nn.ModuleList(
            [nn.Linear(ctx_dim + cfg.time_dim, 2 * cfg.hidden) for _ in range(2)]
        )
        self.out = nn.Linear(cfg.hidden, flat)
        self.act = nn.SiLU()
        self.shape = (cfg.chunk_steps, cfg.action_dim)

    def forward(self, x_t, t, t_emb, ctx):
        flat = x_t.reshape(x_t.shape[0], -1)
        cond = torch.cat([ctx, t_emb], dim=-1)
        h = self.act(self.inp(torch.cat([flat, t_emb, ctx], dim=-1)))
        for layer, film in zip(self.hidden_layers, self.films):
            scale, shift = film(cond).chunk(2, dim=-1)
            h = self.act(layer(h) * (1.0 + scale) + shift)
        target = self.out(h).clamp(-TARGET_CLAMP, TARGET_CLAMP)
        inv = 1.0 / (1.0 - t).clamp(min=0.02)
        out = (target - flat) * inv[:, None]
        return out.reshape(x_t.shape[0], *self.shape)


class StepMlpVelocityHead(nn.Module):
    """Weight-shared per-step head with a global chunk latent.

    Each chunk step is processed by the same small MLP (full rank in its
    20-dim action slice), conditioned on the scene context, flow time, and
    a pooled latent of the whole noisy chunk (which keeps multimodal mode
    choices coherent across steps). Same target-point parameterization as
    the flat head.
    """

    def __init__(self, cfg: NetConfig, ctx_dim: int):
        super().__init__()
        h = cfg.hidden
        self.step_in = nn.Linear(cfg.action_dim, h)
        self.step_pos = nn.Parameter(torch.zeros(cfg.chunk_steps, h))
        self.global_pool = nn.Linear(h, h)
        self.cond = nn.Linear(ctx_dim + cfg.time_dim, h)
        self.film1 = nn.Linear(h, 2 * h)
        self.film2 = nn.Linear(h, 2 * h)
        self.mix1 = nn.Linear(2 * h, h)
        self.mix2 = nn.Linear(h, h)
        self.out = nn.Linear(h, cfg.action_dim)
        # Direct affine readout: chunk targets are nearly affine in the scene
        # geometry, so give that component a one-hop path per step.
        self.direct = nn.Linear(ctx_dim, cfg.chunk_steps * cfg.action_dim)
        nn.init.zeros_(self.direct.weight)
        nn.init.zeros_(self.direct.bias)
        self.act = nn.SiLU()
        nn.init.normal_(self.step_pos, std=0.02)

    def forward(self, x_t, t, t_emb, ctx):
        steps = self.act(self.step_in(x_t) + self.step_pos[None])  # (B, K, H)
        latent = self.act(self.global_pool(steps.mean(dim=1)))  # (B, H)
        cond = self.act(self.cond(torch.cat([ctx, t_emb], dim=-1)))  # (B, H)
        h = self.act(self.mix1(torch.cat([steps, latent[:, None].expand_as(steps)], dim=-1)))
        s1, b1 = self.film1(cond).chunk(2, dim=-1)
        h = h * (1.0 + s1[:, None]) + b1[:, None]
        h = self.act(self.mix2(h))
        s2, b2 = self.film2(cond).chunk(2, dim=-1)
        h = h * (1.0 + s2[:, None]) + b2[:, None]
        target = self.out(h) + self.direct(ctx).reshape(x_t.shape)
        target = target.clamp(-TARGET_CLAMP, TARGET_CLAMP)
        inv = 1.0 / (1.0 - t).clamp(min=0.02)
        return (target - x_t) * inv[:, None, None]


class TransformerVelocityHead(nn.Module):
    """Chunk steps self-attend and cross-attend to per-entity context tokens;
    same target-point parameterization as the MLP head."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        d = cfg.tf_dim
        self.step_in = nn.Linear(cfg.action_dim, d)
        self.time_in = nn.Linear(cfg.time_dim, d)
        self.token_in = nn.Linear(TOKEN_DIM, d)
        self.slot_embed = nn.Embedding(MAX_SLOTS, d)
        self.pos = nn.Parameter(torch.zeros(cfg.chunk_steps, d))
        layer = nn.TransformerDecoderLayer(
            d_model=d, nhead=cfg.tf_heads, dim_feedforward=4 * d,
            dropout=cfg.dropout, batch_first=True, norm_first=True,
        )
        self.decoder = nn.TransformerDecoder(layer, num_layers=cfg.tf_layers)
        self.out = nn.Linear(d, cfg.action_dim)

    def forward(self, x_t, t, t_emb, tokens, slots, present):
        steps = self.step_in(x_t) + self.pos[None] + self.time_in(t_emb)[:, None, :]
        memory = self.token_in(tokens) + self.slot_embed(slots)
        pad_mask = ~present
        out = self.decoder(steps, memory, memory_key_padding_mask=pad_mask)
        target = self.out(out).clamp(-TARGET_CLAMP, TARGET_CLAMP)
        inv = 1.0 / (1.0 - t).clamp(min=0.02)
        return (target - x_t) * inv[:, None, None]


class PolicyNet(nn.Module):
    """Bundles the context encoder, velocity head, and auxiliary heads."""

    def __init__(self, cfg: NetConfig | None = None):
        super().__init__()
        self.cfg = cfg or NetConfig()
        self.time_embed = SinusoidalTimeEmbed(self.cfg.time_dim)
        self.context = ContextEncoder(self.cfg)
        if self.cfg.arch == "transformer":
            self.velocity = TransformerVelocityHead(self.cfg)
        elif self.cfg.arch == "mlp":
            self.velocity = MlpVelocityHead(self.cfg, self.context.out_dim)
        else:
            self.velocity = StepMlpVelocityHead(self.cfg, self.context.out_dim)
        self.aux = AuxHeads(self.context.out_dim, self.cfg.chunk_steps)

    def encode_context(self, tokens, slots, present, raster=None, anchor_uv=None):
        return self.context(tokens, slots, present, raster, anchor_uv)

    def forward(self, x_t, t, tokens, slots, present, raster=None, anchor_uv=None):
        t_emb = self.time_embed(t)
        if self.cfg.arch == "transformer":
            return self.velocity(x_t, t, t_emb, tokens, slots, present)
        ctx = self.encode_context(tokens, slots, present, raster, anchor_uv)
        return self.velocity(x_t, t, t_emb, ctx)

    def aux_forward(self, tokens, slots, present, raster=None, anchor_uv=None):
        return self.aux(self.encode_context(tokens, slots, present, raster, anchor_uv))
