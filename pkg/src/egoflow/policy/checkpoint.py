"""Checkpoint format: JSON manifest + little-endian float32 flat blob.

The manifest lists tensor names/shapes/offsets (raw and EMA copies) and
carries the normalization stats plus the architecture and loss configs
needed to rebuild the policy.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from egoflow.ict import NormStats
from egoflow.policy.losses import LossWeights
from egoflow.policy.network import NetConfig, PolicyNet

MANIFEST = "manifest.json"
WEIGHTS = "weights.bin"


def save_checkpoint(path, result, extra_meta: dict | None = None) -> None:
    """Write a TrainResult to a checkpoint directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors: list[tuple[str, np.ndarray]] = []
    for prefix, state in (("raw", result.net.state_dict()), ("ema", result.ema_params)):
        for name, tensor in state.items():
            tensors.append((f"{prefix}.{name}", tensor.detach().cpu().numpy().astype("<f4")))
    offset = 0
    entries = []
    blob = bytearray()
    for name, arr in tensors:
        data = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "numel": int(arr.size)})
        blob.extend(data)
        offset += arr.size
    manifest = {
        "format": "egoflow-checkpoint-v1",
        "dtype": "<f4",
        "tensors": entries,
        "norm_stats": result.stats.to_dict(),
        "net": result.net.cfg.to_dict(),
        "weights": {k: getattr(result.config.weights, k) for k in result.config.weights.__dataclass_fields__},
        "steps": result.steps,
        "final_val_fm": result.final_val_fm,
        "seed": result.config.seed,
    }
    if extra_meta:
        manifest["meta"] = extra_meta
    (path / WEIGHTS).write_bytes(bytes(blob))
    (path / MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=1))


def load_checkpoint(path):
    """Returns (net, ema_net, stats, manifest)."""
    path = Path(path)
    manifest = json.loads((path / MANIFEST).read_text())
    blob = np.frombuffer((path / WEIGHTS).read_bytes(), dtype="<f4")
    arrays = {}
    for entry in manifest["tensors"]:
        arr = blob[entry["offset"] : entry["offset"] + entry["numel"]].reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
    cfg = NetConfig.from_dict(manifest["net"])

    def build(prefix: str) -> PolicyNet:
        net = PolicyNet(cfg)
        state = net.state_dict()
        loaded = {}
        for name, tensor in state.items():
            arr = arrays[f"{prefix}.{name}"]
            loaded[name] = torch.from_numpy(arr).to(tensor.dtype).reshape(tensor.shape)
        net.load_state_dict(loaded)
        net.eval()
        return net

    stats = NormStats.from_dict(manifest["norm_stats"])
    return build("raw"), build("ema"), stats, manifest


def loss_weights_from_manifest(manifest: dict) -> LossWeights:
    return LossWeights(**manifest["weights"])
