from .tensor import (
    MASK_FILL,
    NonFiniteError,
    Tensor,
    no_grad,
)
from .params import Init, NORMAL, ONES, ZEROS, ParameterSet
from .graph import backward, forward, gradient_check, loss_and_grads
from .optim import AdamW, AdamWConfig, adamw_step
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "MASK_FILL",
    "NonFiniteError",
    "Tensor",
    "no_grad",
    "Init",
    "NORMAL",
    "ONES",
    "ZEROS",
    "ParameterSet",
    "backward",
    "forward",
    "gradient_check",
    "loss_and_grads",
    "AdamW",
    "AdamWConfig",
    "adamw_step",
    "CheckpointError",
    "load_checkpoint",
    "save_checkpoint",
]
