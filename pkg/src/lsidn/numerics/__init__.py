from .autodiff import (
    DomainError,
    Parameter,
    ShapeError,
    Tensor,
    add,
    clip,
    concat,
    div,
    embedding_lookup,
    exp,
    getitem,
    l2_norm,
    layer_norm,
    log,
    logsumexp,
    matmul,
    mean_pool,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    slice_,
    softmax,
    squared_norm,
    stack,
    swapaxes,
    tanh,
    transpose,
    tmean,
    tsum,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .optim import Adam, NonFiniteGradient

__all__ = [
    "Adam", "DomainError", "GradCheckReport", "NonFiniteGradient", "Parameter", "ShapeError",
    "Tensor", "add", "clip", "concat", "div", "embedding_lookup", "exp", "getitem", "grad_check",
    "l2_norm", "layer_norm", "load_checkpoint", "log", "logsumexp", "matmul", "mean_pool", "mul",
    "neg", "relu", "reshape", "save_checkpoint", "sigmoid", "slice_", "softmax", "squared_norm",
    "stack", "swapaxes", "tanh", "tmean", "transpose", "tsum",
]
