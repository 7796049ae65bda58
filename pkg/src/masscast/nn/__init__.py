from .layers import (
    BatchNorm,
    Conv3x3,
    Linear,
    MaxPool2,
    NumericalError,
    ReLU,
    ShapeError,
    concat_backward,
    concat_forward,
    mse_loss,
)
from .optim import Adam, OptimizerState, SGD, make_optimizer

__all__ = [
    "Adam",
    "BatchNorm",
    "Conv3x3",
    "Linear",
    "MaxPool2",
    "NumericalError",
    "OptimizerState",
    "ReLU",
    "SGD",
    "ShapeError",
    "concat_backward",
    "concat_forward",
    "make_optimizer",
    "mse_loss",
]
