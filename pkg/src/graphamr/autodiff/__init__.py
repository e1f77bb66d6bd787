from .checkpoint import load_checkpoint, restore, save_checkpoint
from .gradcheck import gradcheck, numeric_grad
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tape,
    Tensor,
    activation,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    detach,
    dense_aggregate,
    dense_softmax_dot,
    div,
    edge_aggregate,
    edge_softmax_dot,
    elu,
    exp,
    index_rows,
    leaky_relu,
    log,
    matmul,
    mul,
    power,
    reduce,
    relu,
    reshape,
    segment_softmax,
    segment_sum,
    sigmoid,
    slice_cols,
    softmax_rows,
    sub,
    tanh,
    transpose,
)
