"""From-scratch float64 layers, residual blocks, and the two generator
networks (depth image -> geometry image, parametric code -> residual
geometry image), plus their SGD training loop."""

from .layers import (
    Conv2D,
    ConvTranspose2D,
    Dense,
    LeakyReLU,
    Relu,
    Reshape,
    ShapeError,
)
from .blocks import ResidualBlock, DownBlock, UpBlock, down_residual, up_residual
from .networks import (
    Network,
    build_image_to_gim,
    build_param_to_residual_gim,
    count_layers,
    load_network,
    save_network,
)
from .train import (
    TrainConfig,
    TrainingDiverged,
    curvature_weighted_loss,
    learning_rate_at,
    train,
)

__all__ = [
    "Conv2D",
    "ConvTranspose2D",
    "Dense",
    "LeakyReLU",
    "Relu",
    "Reshape",
    "ShapeError",
    "ResidualBlock",
    "DownBlock",
    "UpBlock",
    "down_residual",
    "up_residual",
    "Network",
    "build_image_to_gim",
    "build_param_to_residual_gim",
    "count_layers",
    "save_network",
    "load_network",
    "TrainConfig",
    "TrainingDiverged",
    "curvature_weighted_loss",
    "learning_rate_at",
    "train",
]
