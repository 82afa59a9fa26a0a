from .gradcheck import GradCheckReport, SuiteReport, SuiteResult, gradient_check
from .ops import (
    add,
    avg_pool2d,
    bilinear_sample,
    concat,
    conv2d,
    exp,
    group_norm,
    l2_normalize,
    log,
    masked_logsumexp,
    matmul,
    mul,
    neg,
    relu,
    reshape,
    softmax,
    spatial_mean,
    sub,
    tensor_mean,
    tensor_sum,
    transpose2d,
)
from .tensor import Tape, Tensor, active_tape, record_op

__all__ = [
    "GradCheckReport",
    "SuiteReport",
    "SuiteResult",
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "avg_pool2d",
    "bilinear_sample",
    "concat",
    "conv2d",
    "exp",
    "gradient_check",
    "group_norm",
    "l2_normalize",
    "log",
    "masked_logsumexp",
    "matmul",
    "mul",
    "neg",
    "record_op",
    "relu",
    "reshape",
    "softmax",
    "spatial_mean",
    "sub",
    "tensor_mean",
    "tensor_sum",
    "transpose2d",
]
