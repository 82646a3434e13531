"""TaLU and the comparison activations.

TaLU passes positive inputs through unchanged and squashes the rest with
``alpha * tanh(x)``, where ``alpha`` is a trainable scalar (initially 1.0).
With ``alpha = 0`` it is bit-for-bit ReLU.

Each kind has a NumPy forward and an analytic backward.  Backwards return
an :class:`ActivationGrad` carrying the input gradient and, for kinds with a
trainable scalar (TaLU's alpha, PReLU's slope), the gradient of that scalar.

Conventions at the kink: ``x = 0`` belongs to the non-positive branch for
TaLU, ReLU, LeakyReLU, PReLU, ELU and SELU.  For TaLU that means the slope
jumps from ``alpha`` (at 0) to 1 (just above 0).

>>> import numpy as np
>>> talu_forward(np.array([-20.0, -1.0, 0.0, 1.0, 20.0]), 1.0)
array([-1.        , -0.76159416,  0.        ,  1.        , 20.        ])
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, UsageError
from .tensor import Tensor, record

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805
GELU_C = math.sqrt(2.0 / math.pi)
SOFTPLUS_THRESHOLD = 30.0

KINDS = ("talu", "relu", "leakyrelu", "prelu", "elu", "selu", "gelu", "swish", "softplus", "softsign")

DISPLAY_NAMES = {
    "talu": "TaLU",
    "relu": "ReLU",
    "leakyrelu": "LeakyReLU",
    "prelu": "PReLU",
    "elu": "ELU",
    "selu": "SELU",
    "gelu": "GELU",
    "swish": "Swish",
    "softplus": "SoftPlus",
    "softsign": "SoftSign",
}


@dataclass(frozen=True)
class ActivationSpec:
    """Activation kind plus the hyperparameters it uses.

    ``alpha`` is TaLU's initial scale, ``slope`` the LeakyReLU slope (or
    PReLU's initial slope) and ``beta`` the Swish gate sharpness.
    """

    kind: str = "talu"
    alpha: float = 1.0
    slope: float = 0.3
    beta: float = 1.0
    selu_alpha: float = field(default=SELU_ALPHA, repr=False)
    selu_scale: float = field(default=SELU_SCALE, repr=False)

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in KINDS:
            raise UsageError(f"unknown activation {self.kind!r}; choose from {', '.join(KINDS)}")
        object.__setattr__(self, "kind", kind)

    @property
    def trainable(self) -> bool:
        return self.kind in ("talu", "prelu")

    @property
    def param_count(self) -> int:
        return 1 if self.trainable else 0

    @property
    def initial_param(self) -> float | None:
        if self.kind == "talu":
            return self.alpha
        if self.kind == "prelu":
            return self.slope
        return None

    @property
    def display_name(self) -> str:
        return DISPLAY_NAMES[self.kind]


@dataclass
class ActivationGrad:
    d_input: np.ndarray
    d_param: float | None = None

    @property
    def d_alpha(self):
        return self.d_param


def _check(x, upstream):
    if np.shape(x) != np.shape(upstream):
        raise ShapeError(f"activation backward: input {np.shape(x)} vs upstream {np.shape(upstream)}")


def _sigmoid(z):
    # tanh form stays finite for any finite z
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def talu_forward(x, alpha):
    """max(x, 0) + alpha * tanh(min(x, 0)), written without branches."""
    x = np.asarray(x)
    neg = np.tanh(np.minimum(x, 0.0))
    neg *= alpha
    # -0.0 + 0.0 == +0.0: with alpha = 0 this is exactly relu_forward
    neg += 0.0
    out = np.maximum(x, 0.0)
    out += neg
    return out


def talu_backward(x, alpha, upstream) -> ActivationGrad:
    _check(x, upstream)
    x = np.asarray(x)
    shape = x.shape
    x, upstream = x.reshape(-1), np.reshape(upstream, -1)
    neg = np.minimum(x, 0.0)
    pos = (x > 0).astype(x.dtype)
    d_alpha = float(np.dot(np.tanh(neg), upstream))
    # sech^2 = 4e / (1 + e)^2 with e = exp(2x); unlike 1 - tanh^2 it stays
    # positive far into the negative tail
    e = np.exp(2.0 * neg)
    slope = 1.0 + e
    np.square(slope, out=slope)
    np.divide(e, slope, out=slope)
    slope *= 4.0 * alpha
    slope *= 1.0 - pos
    slope += pos
    slope *= upstream
    slope += 0.0
    return ActivationGrad(slope.reshape(shape), d_alpha)


def relu_forward(x):
    out = np.maximum(x, 0.0)
    out += 0.0
    return out


def relu_backward(x, upstream) -> ActivationGrad:
    _check(x, upstream)
    x = np.asarray(x)
    d = (x > 0).astype(x.dtype)
    d *= upstream
    d += 0.0
    return ActivationGrad(d)


def prelu_forward(x, slope):
    """max(0, x) + slope * min(0, x); LeakyReLU when the slope is fixed."""
    return np.where(x > 0, x, slope * x)


def prelu_backward(x, slope, upstream) -> ActivationGrad:
    _check(x, upstream)
    neg = x <= 0
    d_input = np.where(neg, slope * upstream, upstream)
    return ActivationGrad(d_input, float(np.sum(np.where(neg, x * upstream, 0.0))))


def elu_forward(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_backward(x, upstream) -> ActivationGrad:
    _check(x, upstream)
    return ActivationGrad(np.where(x > 0, upstream, upstream * np.exp(np.minimum(x, 0.0))))


def selu_forward(x, alpha=SELU_ALPHA, scale=SELU_SCALE):
    return scale * np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))


def selu_backward(x, upstream, alpha=SELU_ALPHA, scale=SELU_SCALE) -> ActivationGrad:
    _check(x, upstream)
    slope = np.where(x > 0, scale, scale * alpha * np.exp(np.minimum(x, 0.0)))
    return ActivationGrad(upstream * slope)


def gelu_forward(x):
    """Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + 0.044715 * x**3)))


def gelu_backward(x, upstream) -> ActivationGrad:
    _check(x, upstream)
    t = np.tanh(GELU_C * (x + 0.044715 * x**3))
    dt = (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return ActivationGrad(upstream * (0.5 * (1.0 + t) + 0.5 * x * dt))


def swish_forward(x, beta=1.0):
    return x * _sigmoid(beta * x)


def swish_backward(x, upstream, beta=1.0) -> ActivationGrad:
    _check(x, upstream)
    s = _sigmoid(beta * x)
    return ActivationGrad(upstream * (s + beta * x * s * (1.0 - s)))


def softplus_forward(x):
    big = x > SOFTPLUS_THRESHOLD
    safe = np.where(big, 0.0, x)
    return np.where(big, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(safe)))


def softplus_backward(x, upstream) -> ActivationGrad:
    _check(x, upstream)
    return ActivationGrad(upstream * _sigmoid(x))


def softsign_forward(x):
    return x / (1.0 + np.abs(x))


def softsign_backward(x, upstream) -> ActivationGrad:
    _check(x, upstream)
    d = 1.0 + np.abs(x)
    return ActivationGrad(upstream / (d * d))


def forward(x, spec: ActivationSpec, param: float | None = None):
    """Apply ``spec`` to array ``x``; ``param`` overrides the trainable scalar."""
    if param is None:
        param = spec.initial_param
    k = spec.kind
    if k == "talu":
        return talu_forward(x, param)
    if k == "prelu":
        return prelu_forward(x, param)
    if k == "leakyrelu":
        return prelu_forward(x, spec.slope)
    if k == "relu":
        return relu_forward(x)
    if k == "elu":
        return elu_forward(x)
    if k == "selu":
        return selu_forward(x, spec.selu_alpha, spec.selu_scale)
    if k == "gelu":
        return gelu_forward(x)
    if k == "swish":
        return swish_forward(x, spec.beta)
    if k == "softplus":
        return softplus_forward(x)
    return softsign_forward(x)


def derivative(x, spec: ActivationSpec, upstream, param: float | None = None) -> ActivationGrad:
    if param is None:
        param = spec.initial_param
    k = spec.kind
    if k == "talu":
        return talu_backward(x, param, upstream)
    if k == "prelu":
        return prelu_backward(x, param, upstream)
    if k == "leakyrelu":
        grad = prelu_backward(x, spec.slope, upstream)
        return ActivationGrad(grad.d_input)
    if k == "relu":
        return relu_backward(x, upstream)
    if k == "elu":
        return elu_backward(x, upstream)
    if k == "selu":
        return selu_backward(x, upstream, spec.selu_alpha, spec.selu_scale)
    if k == "gelu":
        return gelu_backward(x, upstream)
    if k == "swish":
        return swish_backward(x, upstream, spec.beta)
    if k == "softplus":
        return softplus_backward(x, upstream)
    return softsign_backward(x, upstream)


def activate(x: Tensor, spec: ActivationSpec, param: Tensor | None = None) -> Tensor:
    """Tape-recorded activation.  ``param`` is the layer's scalar for TaLU/PReLU."""
    if spec.trainable and param is None:
        raise ValueError(f"{spec.display_name} needs its trainable scalar")
    value = None if param is None else param.data
    xd = x.data
    out = forward(xd, spec, value)

    def backward(g):
        grad = derivative(xd, spec, g, value)
        if param is None:
            return (grad.d_input,)
        return grad.d_input, np.asarray(grad.d_param, dtype=g.dtype).reshape(param.shape)

    parents = (x,) if param is None else (x, param)
    return record(out, parents, backward)


def parse(name: str, **kwargs) -> ActivationSpec:
    return ActivationSpec(kind=name, **kwargs)
