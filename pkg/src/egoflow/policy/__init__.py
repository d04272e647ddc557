"""Flow-matching policy: dataset building, losses, network, training."""

from egoflow.policy.dataset import (
    AugmentConfig,
    RecordingTensors,
    TrainSample,
    build_dataset,
    build_sample,
    inject_state_noise,
    sample_at,
    tensorize_recording,
)
from egoflow.policy.losses import (
    ACTION_DIM,
    CHUNK_STEPS,
    GRASP_LOGIT,
    LossWeights,
    aux_losses,
    fm_interpolate,
    fm_loss,
    region_attention_weight,
    total_loss,
)
from egoflow.policy.network import NetConfig, PolicyNet
from egoflow.policy.ot import hungarian, ot_pair_assignment
from egoflow.policy.train import TrainConfig, TrainResult, grad_check, lr_at, train, validate_fm
from egoflow.policy.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "AugmentConfig",
    "RecordingTensors",
    "TrainSample",
    "build_dataset",
    "build_sample",
    "inject_state_noise",
    "sample_at",
    "tensorize_recording",
    "ACTION_DIM",
    "CHUNK_STEPS",
    "GRASP_LOGIT",
    "LossWeights",
    "aux_losses",
    "fm_interpolate",
    "fm_loss",
    "region_attention_weight",
    "total_loss",
    "NetConfig",
    "PolicyNet",
    "hungarian",
    "ot_pair_assignment",
    "TrainConfig",
    "TrainResult",
    "grad_check",
    "lr_at",
    "train",
    "validate_fm",
    "load_checkpoint",
    "save_checkpoint",
]
