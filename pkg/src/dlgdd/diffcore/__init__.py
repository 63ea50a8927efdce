"""Minimal reverse-mode automatic differentiation over numpy arrays."""
from .gradcheck import grad_check, grad_check_store, relative_error
from .nn import init_affine, init_attention_block, init_mlp, linear, mlp, self_attention
from .ops import (
    affine,
    bce_with_logits,
    conv2d,
    l2_normalize,
    layer_norm,
    log_softmax,
    softmax,
    supcon_loss,
)
from .params import ParameterStore, adam_step, clip_grad_norm, global_grad_norm
from .tensor import Tensor, as_tensor, concat, no_grad, relu, sigmoid, softplus, tanh

__all__ = [
    "ParameterStore",
    "Tensor",
    "adam_step",
    "affine",
    "as_tensor",
    "bce_with_logits",
    "clip_grad_norm",
    "concat",
    "conv2d",
    "global_grad_norm",
    "grad_check",
    "grad_check_store",
    "init_affine",
    "init_attention_block",
    "init_mlp",
    "l2_normalize",
    "layer_norm",
    "linear",
    "log_softmax",
    "mlp",
    "no_grad",
    "relative_error",
    "relu",
    "self_attention",
    "sigmoid",
    "softmax",
    "softplus",
    "supcon_loss",
    "tanh",
]
