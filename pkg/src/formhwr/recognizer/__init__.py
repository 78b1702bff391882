"""Type-conditioned CTC sequence recognizer with a from-scratch trainer."""

from .checkpoint import CHECKPOINT_VERSION, load_checkpoint, save_checkpoint
from .diagnostics import digit_fraction, forced_type_histogram
from .model import (
    ArchConfig,
    ModelParams,
    backward_batch,
    forward,
    forward_batch,
    images_to_tensor,
    init_params,
    loss_and_grads,
    type_onehot,
    valid_columns,
)
from .train import Adam, TrainerConfig, TrainResult, evaluate_cer, lr_at, train

__all__ = [
    "Adam",
    "ArchConfig",
    "CHECKPOINT_VERSION",
    "ModelParams",
    "TrainerConfig",
    "TrainResult",
    "backward_batch",
    "digit_fraction",
    "evaluate_cer",
    "forced_type_histogram",
    "forward",
    "forward_batch",
    "images_to_tensor",
    "init_params",
    "load_checkpoint",
    "loss_and_grads",
    "lr_at",
    "save_checkpoint",
    "train",
    "type_onehot",
    "valid_columns",
]
