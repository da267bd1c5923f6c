"""Two-stage channel/sequence attention forecaster on a small numpy autodiff engine."""

__version__ = "0.1.0"

from .model import AblationConfig, CSformer, ModelConfig, count_parameters, model_forward
from .tensor import GradTape, Tensor

__all__ = ["AblationConfig", "CSformer", "GradTape", "ModelConfig", "Tensor", "count_parameters", "model_forward"]
