"""Numpy-backed tensors, autodiff tape, and the op set networks are built from."""

from ghnforge.tensor.core import (
    Tape,
    Tensor,
    active_tape,
    add,
    add_n,
    assert_all_finite,
    backward,
    concat,
    exp,
    gather_rows,
    getitem,
    log,
    matmul,
    mul,
    no_grad,
    parameter,
    pow_const,
    record,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scale,
    shift,
    sigmoid,
    softmax,
    sqrt,
    stack,
    sub,
    tanh,
    tile,
    transpose,
    weighted_sum,
)
from ghnforge.tensor.nn import (
    avg_pool,
    batch_norm,
    conv2d,
    global_avg_pool,
    gru_cell,
    layer_norm,
    linear,
    max_pool,
    multihead_self_attention,
    softmax_cross_entropy,
)

__all__ = [
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "add_n",
    "assert_all_finite",
    "avg_pool",
    "backward",
    "batch_norm",
    "concat",
    "conv2d",
    "exp",
    "gather_rows",
    "getitem",
    "global_avg_pool",
    "gru_cell",
    "layer_norm",
    "linear",
    "log",
    "matmul",
    "max_pool",
    "mul",
    "multihead_self_attention",
    "no_grad",
    "parameter",
    "pow_const",
    "record",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "scale",
    "shift",
    "sigmoid",
    "softmax",
    "softmax_cross_entropy",
    "sqrt",
    "stack",
    "sub",
    "tanh",
    "tile",
    "transpose",
    "weighted_sum",
]
