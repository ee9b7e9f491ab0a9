"""Float64 tensor algebra with reverse-mode autodiff, pooling and Adam."""

from .checkpoint import load_arrays, save_arrays
from .gradcheck import directional_check, grad_check, rel_error
from .optim import Adam, AdamState, TrainingError, adam_step
from .tensor import (
    DimensionError,
    DomainError,
    Graph,
    GraphError,
    Tensor,
    add,
    as_tensor,
    clamp_min,
    concat,
    conv2d,
    div,
    embedding,
    exp,
    getitem,
    grad_enabled,
    im2col,
    l2_normalize,
    l2_normalize_columns,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    pool,
    power,
    relu,
    reshape,
    sigmoid,
    softmax,
    softmax_rows,
    sqrt,
    stack,
    sub,
    swapaxes,
    tanh,
    tmax,
    transpose,
    tsum,
)
