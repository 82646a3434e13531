"""NumPy deep-learning toolkit built around the TaLU activation.

TaLU(x) = x for x > 0 and alpha * tanh(x) otherwise, with a trainable
alpha per activation layer.
"""

from .activations import ActivationSpec, talu_backward, talu_forward
from .datasets import Dataset, load_cifar10, load_mnist, subset
from .models import Model, ModelConfig, build_model, build_residual_cnn, build_simple_cnn
from .tensor import Tensor, backward, set_default_dtype, set_deterministic
from .training import RunRecord, TrainConfig, detect_divergence, softmax_xent, train

__version__ = "0.1.0"
