"""Parameter-matched gated feed-forward variants in a small numpy encoder-decoder."""

from .activations import Activation, ActivationKind
from .data import DataConfig, Vocab, corrupt, generate_corpus, reconstruct
from .ffn import FfnLayer, FfnVariant, VARIANT_NAMES, init_ffn, matched_hidden_width, parameter_count
from .gradcheck import finite_difference_check
from .kernels import BACKEND
from .model import ModelConfig, TransformerModel, model_parameter_count
from .optim import Adafactor, ScheduleConfig, learning_rate
from .tensor import DimensionError, GraphError, NumericalError, Tensor, no_grad, precision, tensor
from .train import compare_variants, heldout_log_perplexity, variance_study

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "ActivationKind",
    "Adafactor",
    "BACKEND",
    "DataConfig",
    "DimensionError",
    "FfnLayer",
    "FfnVariant",
    "GraphError",
    "ModelConfig",
    "NumericalError",
    "ScheduleConfig",
    "Tensor",
    "TransformerModel",
    "VARIANT_NAMES",
    "Vocab",
    "compare_variants",
    "corrupt",
    "finite_difference_check",
    "generate_corpus",
    "heldout_log_perplexity",
    "init_ffn",
    "learning_rate",
    "matched_hidden_width",
    "model_parameter_count",
    "no_grad",
    "parameter_count",
    "precision",
    "reconstruct",
    "tensor",
    "variance_study",
]
