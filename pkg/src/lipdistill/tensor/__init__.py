from .checkpoint import load_checkpoint, save_checkpoint
from .core import Node, Tape, Tensor, as_tensor, grad_enabled, no_grad, tensor
from .functional import (
    add,
    batchnorm1d,
    concat,
    conv1d,
    cross_entropy,
    dropout,
    kl_div,
    kl_div_log,
    linear,
    log_softmax,
    masked_mean_over_time,
    mul,
    prelu,
    relu,
    softmax,
    time_mask,
)
from .gradcheck import grad_check, numeric_grad

__all__ = [
    "Node", "Tape", "Tensor", "as_tensor", "grad_enabled", "no_grad", "tensor",
    "add", "batchnorm1d", "concat", "conv1d", "cross_entropy", "dropout", "kl_div",
    "kl_div_log", "linear", "log_softmax", "masked_mean_over_time", "mul", "prelu",
    "relu", "softmax", "time_mask", "grad_check", "numeric_grad",
    "load_checkpoint", "save_checkpoint",
]
