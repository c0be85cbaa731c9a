"""Multi-modality spatio-temporal forecasting with self-supervised learning."""

from .tensor import Tensor, backward, gradients
from .gradcheck import grad_check
from .model import AblationFlags, LossWeights, ModelConfig, ModelDims, forward_pass, init_params
from .training import TrainConfig, evaluate, persistence_metrics, train

__all__ = [
    "Tensor",
    "backward",
    "gradients",
    "grad_check",
    "AblationFlags",
    "LossWeights",
    "ModelConfig",
    "ModelDims",
    "forward_pass",
    "init_params",
    "TrainConfig",
    "evaluate",
    "persistence_metrics",
    "train",
]

__version__ = "0.1.0"
