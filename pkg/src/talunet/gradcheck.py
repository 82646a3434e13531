"""Central finite-difference checks of tape gradients.

Each suite builds a scalar ``loss = sum(op(inputs) * R)`` for a fixed random
``R``, runs the tape backward once, then perturbs sampled coordinates of
every input by ``+-h`` and compares.  Inputs are drawn away from kinks so
the finite difference is well defined.  Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import activations as act
from . import layers as L
from .tensor import (
    Tensor,
    add,
    backward,
    bias_add,
    conv2d,
    default_dtype,
    flatten,
    matmul,
    maxpool2d,
    mul,
    no_grad,
    tensor_sum,
)
from .training import softmax_xent

H = 1e-5
KINK_MARGIN = 1e-3
DEFAULT_TOL = 1e-5
TOLERANCES = {"batchnorm": 1e-4}


def rel_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@dataclass
class CheckResult:
    component: str
    max_rel_error: float
    points: int
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "ok" if self.ok else "FAIL"
        return f"{self.component:<10} max_rel_err={self.max_rel_error:.3e}  points={self.points:<4d} tol={self.tolerance:.0e}  {status}"


def check_function(
    fn: Callable[..., Tensor],
    inputs: list[np.ndarray],
    rng: np.random.Generator,
    points: int = 100,
    h: float = H,
) -> tuple[float, int]:
    """Max relative error between tape and finite-difference gradients.

    ``fn`` maps input tensors to any tensor; it is reduced against a fixed
    random weighting.  Up to ``points`` coordinates are sampled across all
    inputs (all of them when fewer exist).
    """
    with default_dtype(np.float64):
        leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in inputs]
        out = fn(*leaves)
        weights = Tensor(rng.normal(size=out.shape))
        loss = tensor_sum(mul(out, weights))
        grads = backward(loss, leaves)

        def value() -> np.ndarray:
            with no_grad():
                return fn(*leaves).data.copy()

        coords = [(i, j) for i, leaf in enumerate(leaves) for j in range(leaf.size)]
        if len(coords) > points:
            chosen = rng.choice(len(coords), points, replace=False)
            coords = [coords[k] for k in sorted(chosen)]
        worst = 0.0
        for i, j in coords:
            flat = leaves[i].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + h
            up = value()
            flat[j] = orig - h
            down = value()
            flat[j] = orig
            # difference before reducing so untouched outputs cancel exactly
            numeric = float(np.sum((up - down) * weights.data)) / (2 * h)
            analytic = grads[leaves[i]].reshape(-1)[j]
            worst = max(worst, float(rel_error(analytic, numeric)))
        return worst, len(coords)


def _away_from_zero(rng, shape, low=-4.0, high=4.0):
    x = rng.uniform(low, high, size=shape)
    tiny = np.abs(x) < KINK_MARGIN
    x[tiny] = np.sign(x[tiny] + 1e-12) * KINK_MARGIN * (1 + rng.uniform(size=tiny.sum()))
    return x


def check_activation(kind: str, rng, points: int = 200) -> tuple[float, int]:
    spec = act.ActivationSpec(kind)
    x = _away_from_zero(rng, (points,))
    if spec.trainable:
        param = np.asarray(rng.uniform(0.1, 2.0))
        # points + 1 covers every coordinate, the scalar included
        return check_function(lambda t, p: act.activate(t, spec, p), [x, param], rng, points + 1)
    return check_function(lambda t: act.activate(t, spec), [x], rng, points)


def check_dense(rng, points=100):
    err = 0.0
    total = 0
    for _ in range(3):
        x, w, b = rng.normal(size=(4, 6)), rng.normal(size=(6, 5)), rng.normal(size=5)
        e, n = check_function(lambda a, k, c: bias_add(matmul(a, k), c), [x, w, b], rng, points // 3 + 1)
        err, total = max(err, e), total + n
    return err, total


def check_conv2d(rng, points=100):
    err, total = 0.0, 0
    for padding in ("same", "valid", "same"):
        x = rng.normal(size=(2, 5, 5, 3))
        k = rng.normal(size=(3, 3, 3, 4))
        b = rng.normal(size=4)
        e, n = check_function(lambda a, w, c: conv2d(a, w, c, padding), [x, k, b], rng, points // 3 + 1)
        err, total = max(err, e), total + n
    return err, total


def _distinct(rng, shape, spacing=0.01):
    # values at least `spacing` apart so +-h never changes a window's argmax
    n = int(np.prod(shape))
    return (rng.permutation(n) * spacing - n * spacing / 2).reshape(shape)


def check_maxpool(rng, points=100):
    err, total = 0.0, 0
    for shape in ((2, 4, 4, 3), (1, 6, 6, 2), (2, 7, 5, 2)):
        x = _distinct(rng, shape)
        e, n = check_function(lambda a: maxpool2d(a, floor=True), [x], rng, points // 3 + 1)
        err, total = max(err, e), total + n
    return err, total


def check_batchnorm(rng, points=100):
    err, total = 0.0, 0
    for shape in ((4, 2, 2, 3), (8, 5), (3, 3, 3, 2)):
        c = shape[-1]
        x = rng.normal(size=shape) * 2 + 0.5
        gamma, beta = rng.uniform(0.5, 2.0, size=c), rng.normal(size=c)
        e, n = check_function(lambda a, g, b: L.batchnorm_train(a, g, b, 1e-3)[0], [x, gamma, beta], rng, points // 3 + 1)
        err, total = max(err, e), total + n
    return err, total


def check_loss(rng, points=100):
    err, total = 0.0, 0
    for n_rows in (4, 8, 16):
        logits = rng.normal(size=(n_rows, 10))
        labels = rng.integers(0, 10, size=n_rows)
        e, n = check_function(lambda z: softmax_xent(z, labels), [logits], rng, points // 3 + 1)
        err, total = max(err, e), total + n
    return err, total


def check_structural(rng, points=100):
    a, b = rng.normal(size=(2, 4, 4, 2)), rng.normal(size=(2, 4, 4, 2))
    return check_function(lambda x, y: flatten(add(x, y)), [a, b], rng, points)


LAYER_SUITES = {
    "conv2d": check_conv2d,
    "dense": check_dense,
    "maxpool": check_maxpool,
    "batchnorm": check_batchnorm,
    "loss": check_loss,
    "add": check_structural,
}


def components() -> tuple[str, ...]:
    return act.KINDS + tuple(LAYER_SUITES)


def run(names=("all",), seed: int = 0, tol: float | None = None) -> list[CheckResult]:
    """Run the named suites ("all" for every activation and layer)."""
    names = list(names)
    if "all" in names:
        names = list(components())
    results = []
    for name in names:
        rng = np.random.default_rng([seed, components().index(name)] if name in components() else seed)
        if name in act.KINDS:
            err, n = check_activation(name, rng)
        elif name in LAYER_SUITES:
            err, n = LAYER_SUITES[name](rng)
        else:
            raise KeyError(name)
        limit = tol if tol is not None else TOLERANCES.get(name, DEFAULT_TOL)
        results.append(CheckResult(name, err, n, limit))
    return results
