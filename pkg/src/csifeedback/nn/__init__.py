from .graph import GRAD_PARAMS, PARAM_ORDER, ModelGraph
from .layers import (
    LayerSpec,
    mse_loss,
    truncated_normal_init,
    weighted_channel_mse,
)
from .optim import AdamState, TrainSchedule, adam_step, plateau_lr_update
from .serialize import file_size_for, load_params, save_params

__all__ = [
    "AdamState",
    "GRAD_PARAMS",
    "LayerSpec",
    "ModelGraph",
    "PARAM_ORDER",
    "TrainSchedule",
    "adam_step",
    "file_size_for",
    "load_params",
    "mse_loss",
    "plateau_lr_update",
    "save_params",
    "truncated_normal_init",
    "weighted_channel_mse",
]
