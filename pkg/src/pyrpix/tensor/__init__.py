from pyrpix.tensor.conv import backend_name, conv2d_reference, get_backend, set_backend
from pyrpix.tensor.core import DimensionError, Tensor, as_tensor, grad_enabled, no_grad
from pyrpix.tensor.ops import (
    add,
    add_channel_bias,
    channel_slice,
    concat,
    crop2d,
    conv2d,
    elementwise,
    embedding,
    from_patches,
    log_softmax_rows,
    mean,
    mul,
    relu,
    reshape,
    scale,
    softmax_xent,
    strided_slice,
    sum_all,
    to_patches,
    transpose,
)
from pyrpix.tensor.optim import NonFiniteGradient, RMSprop, rmsprop_step

__all__ = [
    "DimensionError",
    "NonFiniteGradient",
    "RMSprop",
    "Tensor",
    "add",
    "add_channel_bias",
    "as_tensor",
    "backend_name",
    "channel_slice",
    "concat",
    "crop2d",
    "conv2d",
    "conv2d_reference",
    "elementwise",
    "embedding",
    "from_patches",
    "get_backend",
    "grad_enabled",
    "log_softmax_rows",
    "mean",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "rmsprop_step",
    "scale",
    "set_backend",
    "softmax_xent",
    "strided_slice",
    "sum_all",
    "to_patches",
    "transpose",
]
