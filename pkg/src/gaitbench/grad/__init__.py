from .checkpoint import load_checkpoint, save_checkpoint
from .optim import SGD, Adam, OptimizerState, make_optimizer
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    add,
    as_tensor,
    affine,
    concat,
    conv2d,
    default_dtype,
    hinge,
    max_over_axis,
    maxpool2d,
    mean_all,
    pairwise_sq_dist,
    relu,
    reshape,
    scale,
    sqrt,
    stack,
    sub,
    sum_all,
    take,
)
