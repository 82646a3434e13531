"""Learnable and structural layers.

A layer owns its trainable parameters (leaf tensors with ``requires_grad``)
and any non-trainable buffers, knows its output shape for a given input
shape, and runs forward on the tape.  Parameter accounting follows the
usual conventions:

* Dense in->out: ``in*out + out``
* Conv2D kh x kw, Cin->Cout: ``kh*kw*Cin*Cout + Cout``
* BatchNorm over C channels: ``4C`` total, of which ``2C`` trainable
* TaLU / PReLU activation: one scalar
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import activations as act
from .errors import ContractError, ShapeError
from .tensor import Tensor, add, bias_add, conv2d, flatten, matmul, maxpool2d, record


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base class.  Subclasses fill ``self.params`` and ``self.buffers``."""

    type_name = "Layer"

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        raise NotImplementedError

    def __call__(self, x, training: bool = False):
        return self.forward(x, training)

    def output_shape(self, input_shape: tuple) -> tuple:
        return input_shape

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def trainable_count(self) -> int:
        return sum(p.size for p in self.params.values())

    @property
    def non_trainable_count(self) -> int:
        return sum(b.size for b in self.buffers.values())

    @property
    def param_count(self) -> int:
        return self.trainable_count + self.non_trainable_count


class Dense(Layer):
    type_name = "Dense"

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        w = glorot_uniform(rng, (in_features, out_features), in_features, out_features)
        self.params["kernel"] = Tensor(w, requires_grad=True, name="kernel")
        self.params["bias"] = Tensor(np.zeros(out_features), requires_grad=True, name="bias")

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"Dense expects (N, {self.in_features}) input, got {x.shape}")
        return bias_add(matmul(x, self.params["kernel"]), self.params["bias"])

    def output_shape(self, input_shape):
        return (self.out_features,)


class Conv2D(Layer):
    type_name = "Conv2D"

    def __init__(self, in_channels: int, filters: int, kernel_size: int = 3, padding: str = "same",
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_channels, self.filters = in_channels, filters
        self.kernel_size, self.padding = kernel_size, padding
        k = kernel_size
        w = glorot_uniform(rng, (k, k, in_channels, filters), k * k * in_channels, k * k * filters)
        self.params["kernel"] = Tensor(w, requires_grad=True, name="kernel")
        self.params["bias"] = Tensor(np.zeros(filters), requires_grad=True, name="bias")

    def forward(self, x, training=False):
        return conv2d(x, self.params["kernel"], self.params["bias"], padding=self.padding)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if c != self.in_channels:
            raise ShapeError(f"Conv2D expects {self.in_channels} channels, got {c}")
        if self.padding == "valid":
            h, w = h - self.kernel_size + 1, w - self.kernel_size + 1
        return (h, w, self.filters)


def batchnorm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float):
    """Standardize over every axis but the last using batch statistics.

    Returns ``(output, batch_mean, batch_var)``.  The backward pass includes
    the paths through the batch mean and (biased) variance.
    """
    axes = tuple(range(x.ndim - 1))
    m = x.size // x.shape[-1]
    mean = x.data.mean(axis=axes)
    centered = x.data - mean
    var = (centered * centered).mean(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = gamma.data * xhat + beta.data

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data
        dx = (inv / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, dgamma, dbeta

    return record(out, (x, gamma, beta), backward), mean, var


def batchnorm_infer(x: Tensor, gamma: Tensor, beta: Tensor, mean, var, eps: float) -> Tensor:
    inv = 1.0 / np.sqrt(var + eps)
    scale = gamma.data * inv
    out = x.data - mean
    out *= scale
    out += beta.data
    axes = tuple(range(x.ndim - 1))

    def backward(g):
        xhat = (x.data - mean) * inv
        return g * scale, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return record(out, (x, gamma, beta), backward)


@dataclass
class BatchNormState:
    epsilon: float = 1e-3
    momentum: float = 0.99
    warmup: bool = True
    steps: int = 0

    def step_momentum(self) -> float:
        """Momentum for the next moving-average update.

        With warmup the moving statistics are the bias-corrected average of
        the batches seen so far: the first update copies the batch, and the
        momentum approaches ``momentum`` as steps accumulate.  Without it the
        initial mean 0 / variance 1 decay at the plain ``momentum`` rate,
        which for short runs leaves inference dominated by the initial values.
        """
        self.steps += 1
        mom = self.momentum
        if not self.warmup:
            return mom
        return mom * (1.0 - mom ** (self.steps - 1)) / (1.0 - mom**self.steps)


class BatchNorm(Layer):
    """Per-channel batch normalization with moving statistics.

    Training mode normalizes with the batch statistics and folds them into
    the moving averages ``m <- momentum*m + (1-momentum)*batch``; inference
    mode reads only the moving averages.  See ``BatchNormState`` for the
    warmup of the early updates.
    """

    type_name = "BatchNormalization"

    def __init__(self, channels: int, epsilon: float = 1e-3, momentum: float = 0.99, warmup: bool = True):
        super().__init__()
        self.channels = channels
        self.state = BatchNormState(epsilon, momentum, warmup)
        self.params["gamma"] = Tensor(np.ones(channels), requires_grad=True, name="gamma")
        self.params["beta"] = Tensor(np.zeros(channels), requires_grad=True, name="beta")
        self.buffers["moving_mean"] = np.zeros(channels, dtype=self.params["gamma"].data.dtype)
        self.buffers["moving_var"] = np.ones(channels, dtype=self.params["gamma"].data.dtype)

    def forward(self, x, training=False):
        if x.shape[-1] != self.channels:
            raise ShapeError(f"BatchNorm over {self.channels} channels got input {x.shape}")
        gamma, beta = self.params["gamma"], self.params["beta"]
        eps = self.state.epsilon
        if not training:
            return batchnorm_infer(x, gamma, beta, self.buffers["moving_mean"], self.buffers["moving_var"], eps)
        if x.shape[0] < 2:
            raise ContractError(f"BatchNorm in training mode needs a batch of at least 2, got {x.shape[0]}")
        out, mean, var = batchnorm_train(x, gamma, beta, eps)
        mom = self.state.step_momentum()
        self.buffers["moving_mean"] = mom * self.buffers["moving_mean"] + (1.0 - mom) * mean
        self.buffers["moving_var"] = mom * self.buffers["moving_var"] + (1.0 - mom) * var
        return out


class Activation(Layer):
    """Activation layer; TaLU and PReLU carry one trainable scalar each."""

    def __init__(self, spec: act.ActivationSpec):
        super().__init__()
        self.spec = spec
        if spec.trainable:
            self.params["alpha" if spec.kind == "talu" else "slope"] = Tensor(
                np.asarray(spec.initial_param), requires_grad=True, name=spec.kind
            )

    @property
    def type_name(self):
        return self.spec.display_name

    @property
    def scalar(self) -> Tensor | None:
        return next(iter(self.params.values()), None)

    def forward(self, x, training=False):
        return act.activate(x, self.spec, self.scalar)


class MaxPool2D(Layer):
    """2x2 stride-2 max pooling; odd trailing rows/columns are dropped."""

    type_name = "MaxPooling2D"

    def __init__(self, window: int = 2):
        super().__init__()
        self.window = window

    def forward(self, x, training=False):
        return maxpool2d(x, self.window, self.window, floor=True)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        return (h // self.window, w // self.window, c)


class Flatten(Layer):
    type_name = "Flatten"

    def forward(self, x, training=False):
        return flatten(x)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


class Add(Layer):
    """Elementwise sum of two branches (residual junction)."""

    type_name = "Add"

    def forward(self, x, training=False):
        a, b = x
        return add(a, b)

    def output_shape(self, input_shape):
        a, b = input_shape
        if a != b:
            raise ShapeError(f"Add needs identical shapes, got {a} and {b}")
        return a


class Block(Layer):
    """Several layers run in sequence and reported as one row.

    The residual network counts each conv's activation scalar (and any
    batch norm) under the conv's row, so its blocks are built this way.
    """

    def __init__(self, layers: list[Layer], type_name: str | None = None):
        super().__init__()
        self.layers = layers
        self.type_name = type_name or layers[0].type_name
        for i, layer in enumerate(layers):
            for key, p in layer.params.items():
                self.params[f"{i}.{key}"] = p

    @property
    def non_trainable_count(self):
        return sum(layer.non_trainable_count for layer in self.layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def output_shape(self, input_shape):
        for layer in self.layers:
            input_shape = layer.output_shape(input_shape)
        return input_shape
