"""The simple and residual CNNs used for the activation comparison.

Both are small DAGs of named nodes.  ``build_model`` dispatches on
``ModelConfig.architecture``; the summary printer emits Keras-style
layer / output shape / param rows with a totals footer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import layers as L
from .activations import ActivationSpec
from .errors import ShapeError, UsageError
from .tensor import Tensor

ARCHITECTURES = ("simple", "residual")
INPUT_SHAPES = {"cifar10": (32, 32, 3), "mnist": (28, 28, 1)}

# Footer total quoted for the reference residual layout.  Its per-layer rows
# (which this builder reproduces) add up to 73 fewer.
REFERENCE_RESIDUAL_TOTAL = 4_252_187
REFERENCE_SIMPLE_TOTAL = 550_577


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "simple"
    activation: ActivationSpec = field(default_factory=ActivationSpec)
    use_batchnorm: bool = False
    input_shape: tuple[int, int, int] = (32, 32, 3)
    num_classes: int = 10
    seed: int = 0
    bn_epsilon: float = 1e-3
    bn_momentum: float = 0.99
    bn_warmup: bool = True

    def __post_init__(self):
        if isinstance(self.activation, str):
            object.__setattr__(self, "activation", ActivationSpec(self.activation))
        if self.architecture not in ARCHITECTURES:
            raise UsageError(f"unknown architecture {self.architecture!r}; choose simple or residual")
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))


@dataclass
class Node:
    name: str
    layer: L.Layer
    inputs: tuple[str, ...]
    label: str


class Model:
    """A DAG of layers evaluated in insertion order."""

    def __init__(self, input_shape, name: str = "model"):
        self.input_shape = tuple(input_shape)
        self.name = name
        self.nodes: list[Node] = []
        self._shapes: dict[str, tuple] = {"input": self.input_shape}

    def add(self, layer: L.Layer, inputs=None, name: str | None = None, label: str | None = None) -> str:
        if inputs is None:
            inputs = (self.nodes[-1].name if self.nodes else "input",)
        elif isinstance(inputs, str):
            inputs = (inputs,)
        name = name or f"{layer.type_name.lower()}_{len(self.nodes)}"
        if name in self._shapes:
            raise ValueError(f"duplicate node name {name!r}")
        in_shapes = [self._shapes[i] for i in inputs]
        self._shapes[name] = layer.output_shape(in_shapes[0] if len(in_shapes) == 1 else tuple(in_shapes))
        self.nodes.append(Node(name, layer, tuple(inputs), label or layer.type_name))
        return name

    @property
    def output_shape(self) -> tuple:
        return self._shapes[self.nodes[-1].name] if self.nodes else self.input_shape

    def shape_of(self, name: str) -> tuple:
        return self._shapes[name]

    def forward(self, x, training: bool = False) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"{self.name} expects inputs (N, {self.input_shape}), got {x.shape}")
        values = {"input": x}
        for node in self.nodes:
            args = [values[i] for i in node.inputs]
            values[node.name] = node.layer.forward(args[0] if len(args) == 1 else tuple(args), training)
        return values[self.nodes[-1].name] if self.nodes else x

    __call__ = forward

    def parameters(self) -> list[Tensor]:
        return [p for node in self.nodes for p in node.layer.parameters()]

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"{n.name}/{k}": p for n in self.nodes for k, p in n.layer.params.items()}

    def leaf_layers(self) -> list[L.Layer]:
        out = []
        for node in self.nodes:
            out.extend(node.layer.layers if isinstance(node.layer, L.Block) else [node.layer])
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{i}/{k}": b for i, layer in enumerate(self.leaf_layers()) for k, b in layer.buffers.items()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def param_count(self) -> dict[str, int]:
        """Total, trainable and non-trainable parameter counts."""
        trainable = sum(n.layer.trainable_count for n in self.nodes)
        frozen = sum(n.layer.non_trainable_count for n in self.nodes)
        return {"total": trainable + frozen, "trainable": trainable, "non_trainable": frozen}

    def summary_rows(self) -> list[tuple[str, tuple, int, tuple[str, ...]]]:
        rows = []
        for node in self.nodes:
            rows.append((node.label, (None, *self._shapes[node.name]), node.layer.param_count, node.inputs))
        return rows

    def summary(self, connections: bool = False) -> str:
        header = ["Layer", "Output Shape", "Param #"] + (["Connected to"] if connections else [])
        body = []
        if connections:
            body.append(["InputLayer", _fmt_shape((None, *self.input_shape)), "0", "[]"])
        labels = {n.name: n.label for n in self.nodes}
        for label, shape, count, inputs in self.summary_rows():
            row = [label, _fmt_shape(shape), str(count)]
            if connections:
                row.append(", ".join("InputLayer" if i == "input" else labels[i] for i in inputs))
            body.append(row)
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        line = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
        rule = "=" * len(line(header))
        counts = self.param_count()
        out = [rule, line(header), rule] + [line(r) for r in body] + [rule]
        out += [
            f"Total params: {counts['total']:,}",
            f"Trainable params: {counts['trainable']:,}",
            f"Non-trainable params: {counts['non_trainable']:,}",
        ]
        return "\n".join(out)


def _fmt_shape(shape) -> str:
    return "(" + ", ".join("None" if d is None else str(d) for d in shape) + ")"


def _check_input(cfg: ModelConfig):
    h, w, c = cfg.input_shape
    if min(h, w) < 8 or c < 1:
        raise ShapeError(f"input shape {cfg.input_shape} too small: three 2x2 poolings need H, W >= 8")


def build_simple_cnn(cfg: ModelConfig) -> Model:
    """Three conv pairs with pooling, then Dense(128) and Dense(classes).

    With batch norm each conv/dense hidden layer is followed by BN before
    its activation.  The final Dense emits raw logits.
    """
    if cfg.architecture != "simple":
        raise UsageError(f"build_simple_cnn got architecture {cfg.architecture!r}")
    _check_input(cfg)
    rng = np.random.default_rng(cfg.seed)
    model = Model(cfg.input_shape, name="simple_cnn")

    def bn_act(channels):
        if cfg.use_batchnorm:
            model.add(L.BatchNorm(channels, cfg.bn_epsilon, cfg.bn_momentum, cfg.bn_warmup))
        model.add(L.Activation(cfg.activation))

    channels = cfg.input_shape[2]
    for filters in (32, 64, 128):
        for _ in range(2):
            model.add(L.Conv2D(channels, filters, 3, "same", rng))
            bn_act(filters)
            channels = filters
        model.add(L.MaxPool2D())
    model.add(L.Flatten())
    model.add(L.Dense(model.output_shape[0], 128, rng))
    bn_act(128)
    model.add(L.Dense(128, cfg.num_classes, rng))
    return model


def build_residual_cnn(cfg: ModelConfig) -> Model:
    """Seven 32-filter conv blocks with three identity shortcuts.

    Each block is conv (+BN) + activation, reported as a single row.  Every
    residual pair reads the previous junction: ``Add_k = block(block(prev)) + prev``.
    """
    if cfg.architecture != "residual":
        raise UsageError(f"build_residual_cnn got architecture {cfg.architecture!r}")
    _check_input(cfg)
    rng = np.random.default_rng(cfg.seed)
    model = Model(cfg.input_shape, name="residual_cnn")

    def block(in_ch, label, inputs):
        parts = [L.Conv2D(in_ch, 32, 3, "same", rng)]
        if cfg.use_batchnorm:
            parts.append(L.BatchNorm(32, cfg.bn_epsilon, cfg.bn_momentum, cfg.bn_warmup))
        parts.append(L.Activation(cfg.activation))
        return model.add(L.Block(parts, "Conv2D"), inputs, name=label, label=label)

    prev = block(cfg.input_shape[2], "Conv2D1", "input")
    index = 2
    for k in (1, 2, 3):
        a = block(32, f"Conv2D{index}", prev)
        b = block(32, f"Conv2D{index + 1}", a)
        prev = model.add(L.Add(), (prev, b), name=f"Add{k}", label=f"Add{k}")
        index += 2
    model.add(L.Flatten(), prev, name="Flatten", label="Flatten")
    flat = model.output_shape[0]
    dense = [L.Dense(flat, 128, rng)]
    if cfg.use_batchnorm:
        dense.append(L.BatchNorm(128, cfg.bn_epsilon, cfg.bn_momentum, cfg.bn_warmup))
    dense.append(L.Activation(cfg.activation))
    model.add(L.Block(dense, "Dense"), name="Dense1", label="Dense1")
    model.add(L.Dense(128, cfg.num_classes, rng), name="Dense2", label="Dense2")
    return model


def build_model(cfg: ModelConfig) -> Model:
    if cfg.architecture == "simple":
        return build_simple_cnn(cfg)
    return build_residual_cnn(cfg)


def config_for(dataset: str, **kwargs) -> ModelConfig:
    """ModelConfig with the input shape of ``dataset`` ("mnist" or "cifar10")."""
    if dataset not in INPUT_SHAPES:
        raise UsageError(f"unknown dataset {dataset!r}; choose mnist or cifar10")
    return ModelConfig(input_shape=INPUT_SHAPES[dataset], **kwargs)


def with_activation(cfg: ModelConfig, activation) -> ModelConfig:
    return replace(cfg, activation=activation)
