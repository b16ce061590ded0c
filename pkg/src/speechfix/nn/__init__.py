"""Numpy autograd engine and the compact mask-estimation network."""

from .autograd import Tensor, no_grad
from .layers import MaskNet
from .optim import AdamState, adam_step, decay_interval
from .train import (
    TrainConfig,
    forward_mask,
    load_checkpoint,
    mae_loss,
    restore_mel,
    save_checkpoint,
    train,
)

__all__ = [
    "Tensor", "no_grad", "MaskNet", "AdamState", "adam_step", "decay_interval",
    "TrainConfig", "forward_mask", "load_checkpoint", "mae_loss", "restore_mel",
    "save_checkpoint", "train",
]
