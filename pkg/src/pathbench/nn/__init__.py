from .checkpoint import CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, check_gradients, grad_check
from .heads import (
    AttentionMIL,
    LinearProbe,
    attention_pool_backward,
    attention_pool_forward,
    linear_backward,
    linear_forward,
    linear_loss_and_grads,
    mil_loss_and_grads,
    softmax,
    softmax_xent,
)
from .optim import LrSchedule, OptState, adamw_state, adamw_step, cosine_lr, sgd_state, sgd_step

__all__ = [
    "AttentionMIL", "CheckpointError", "GradCheckReport", "LinearProbe", "LrSchedule", "OptState",
    "adamw_state", "adamw_step", "attention_pool_backward", "attention_pool_forward",
    "check_gradients", "cosine_lr", "decode_checkpoint", "encode_checkpoint", "grad_check", "linear_backward", "linear_forward",
    "linear_loss_and_grads", "load_checkpoint", "mil_loss_and_grads", "save_checkpoint",
    "sgd_state", "sgd_step", "softmax", "softmax_xent",
]
