from . import vtf
from .gradcheck import gradcheck, max_rel_error
from .tensor import (
    GraphError,
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    avg_pool2d,
    broadcast_to,
    cast,
    check_finite,
    check_finite_enabled,
    concat,
    conv1d_temporal,
    conv2d,
    default_dtype,
    div,
    embedding,
    exp,
    get_default_dtype,
    getitem,
    group_norm,
    layer_norm,
    linear,
    matmul,
    mean,
    mse,
    mul,
    no_grad,
    reshape,
    set_check_finite,
    silu,
    softmax,
    square,
    sub,
    sum_,
    transpose,
    upsample_nearest2d,
)

__all__ = [name for name in dir() if not name.startswith("_")]
