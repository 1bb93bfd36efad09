"""Dense float tensors with reverse-mode autodiff, layers and the AdamW optimizer."""

from .nn import (
    MLP,
    Block,
    Embedding,
    Linear,
    Module,
    MultiHeadAttention,
    RMSNorm,
    hash_parameters,
    module_hash,
    sinusoid_features,
    stack_rows,
)
from .ops import (
    apply_elementwise,
    attention,
    gelu,
    mse_loss,
    rmsnorm,
    round_ste,
    softmax,
    softmax_cross_entropy,
    tanh,
)
from .optim import AdamW, TrainState, adamw_step, clip_grad_norm, grad_norm
from .tensor import (
    Graph,
    Parameter,
    Tensor,
    add,
    concat,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    precision,
    reshape,
    scale,
    sub,
    take_rows,
    transpose,
    tsum,
)

__all__ = [
    "MLP",
    "AdamW",
    "Block",
    "Embedding",
    "Graph",
    "Linear",
    "Module",
    "MultiHeadAttention",
    "Parameter",
    "RMSNorm",
    "Tensor",
    "TrainState",
    "add",
    "adamw_step",
    "apply_elementwise",
    "attention",
    "clip_grad_norm",
    "concat",
    "gelu",
    "grad_norm",
    "hash_parameters",
    "matmul",
    "mean",
    "module_hash",
    "mse_loss",
    "mul",
    "neg",
    "no_grad",
    "precision",
    "reshape",
    "rmsnorm",
    "round_ste",
    "scale",
    "sinusoid_features",
    "softmax",
    "softmax_cross_entropy",
    "stack_rows",
    "sub",
    "take_rows",
    "tanh",
    "transpose",
    "tsum",
]
