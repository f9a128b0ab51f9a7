from .gradcheck import finite_diff_grad, rel_l2
from .nn import (
    activation,
    channel_linear,
    clamp_abs_min,
    conv2d,
    conv_transpose2d,
    gelu,
    layer_norm,
    silu,
    softmax_axis,
    softplus,
)
from .tensor import (
    Param,
    Tape,
    TapeNode,
    Tensor,
    add,
    backward,
    concat,
    div,
    exp,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    sub,
    swap_last,
    tabs,
    take,
    transpose,
    tsum,
)
