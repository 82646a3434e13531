"""Dense NHWC tensors with a reverse-mode autodiff tape.

Every op builds its output from NumPy arrays and, when any input requires a
gradient, records a closure mapping the upstream gradient to one gradient per
input.  Creation order doubles as topological order, so :func:`backward` only
has to sort reachable nodes by their creation stamp.

Broadcasting is deliberately absent: the only implicit expansion is the
per-channel bias add.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from threadpoolctl import threadpool_limits

from .errors import ContractError, ShapeError

_dtype = np.float64
_grad_enabled = True
_stamp = itertools.count()
_thread_limiter = None


def set_default_dtype(dtype) -> None:
    """Select float64 (default, used for gradient checks) or float32."""
    global _dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _dtype = dtype


def get_default_dtype():
    return _dtype


@contextlib.contextmanager
def default_dtype(dtype):
    previous = _dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def set_deterministic(flag: bool) -> None:
    """Pin BLAS to one thread so repeated runs are bit-identical."""
    global _thread_limiter
    if flag and _thread_limiter is None:
        _thread_limiter = threadpool_limits(limits=1)
    elif not flag and _thread_limiter is not None:
        _thread_limiter.restore_original_limits()
        _thread_limiter = None


@contextlib.contextmanager
def deterministic():
    with threadpool_limits(limits=1):
        yield


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording tape nodes."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """An n-dimensional float array that may sit on the autodiff tape.

    Leaves created with ``requires_grad=True`` are parameters; their
    gradient accumulates in ``.grad`` on every :func:`backward` call until
    :meth:`zero_grad` resets it.
    """

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _dtype:
            arr = arr.astype(_dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._stamp = next(_stamp)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result, attaching ``backward`` if any parent needs a gradient.

    ``backward(upstream)`` must return one array (or None) per parent, each
    shaped like that parent.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes differ: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape("add", a, b)
    return record(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape("mul", a, b)
    x, y = a.data, b.data
    return record(x * y, (a, b), lambda g: (g * y, g * x))


def tensor_sum(a: Tensor) -> Tensor:
    """Sum of all elements as a 0-d tensor."""
    shape = a.shape
    return record(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} @ {b.shape}")
    x, y = a.data, b.data
    return record(x @ y, (a, b), lambda g: (g @ y.T, x.T @ g))


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias along the last axis (the one allowed broadcast)."""
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"bias_add: bias {bias.shape} does not match channels of {x.shape}")
    axes = tuple(range(x.ndim - 1))
    return record(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=axes)))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    original = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),))


def flatten(a: Tensor) -> Tensor:
    """Collapse every axis but the batch axis."""
    return reshape(a, (a.shape[0], int(np.prod(a.shape[1:], dtype=np.int64))))


def _same_padding(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    padding: str = "same",
    stride: int = 1,
) -> Tensor:
    """2-D cross-correlation of an NHWC input with a (kh, kw, Cin, Cout) kernel.

    Implemented as im2col followed by one matrix product.  ``padding="same"``
    pads like TensorFlow (extra row/column at the bottom/right when odd).
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: expected NHWC input and 4-d kernel, got {x.shape}, {kernel.shape}")
    if stride < 1:
        raise ContractError(f"conv2d: stride must be >= 1, got {stride}")
    n, h, w, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv2d: kernel expects {kcin} input channels, input {x.shape} has {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {cout} output channels")

    if padding == "same":
        pt, pb = _same_padding(h, kh, stride)
        pl, pr = _same_padding(w, kw, stride)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        raise ContractError(f"conv2d: padding must be 'same' or 'valid', got {padding!r}")

    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt or pb or pl or pr else x.data
    hp, wp = xp.shape[1], xp.shape[2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")

    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, : stride * ho : stride, : stride * wo : stride]
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * cin)
    wmat = kernel.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, cout)

    def backward(g):
        g2 = g.reshape(n * ho * wo, cout)
        dkernel = (cols.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        dbias = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        dx = None
        if x.requires_grad:
            # one product per kernel offset beats scattering a full dcols
            dxp = np.zeros((n, hp, wp, cin), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    part = (g2 @ kernel.data[i, j].T).reshape(n, ho, wo, cin)
                    dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += part
            dx = dxp[:, pt : pt + h, pl : pl + w, :]
        grads = [dx, dkernel]
        if bias is not None:
            grads.append(dbias)
        return grads

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return record(out, parents, backward)


def maxpool2d(x: Tensor, window: int = 2, stride: int = 2, floor: bool = False) -> Tensor:
    """Non-overlapping max pooling over NHWC input.

    Ties route the gradient to the first element of the window in row-major
    order.  With ``floor=True`` trailing rows/columns that do not fill a
    window are dropped (28 -> 14 -> 7 -> 3); otherwise they are an error.
    """
    if window != stride:
        raise ContractError("maxpool2d: only non-overlapping windows (window == stride) are supported")
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d: expected NHWC input, got {x.shape}")
    n, h, w, c = x.shape
    if not floor and (h % window or w % window):
        raise ShapeError(f"maxpool2d: spatial dims {h}x{w} not divisible by {window}")
    ho, wo = h // window, w // window
    if ho < 1 or wo < 1:
        raise ShapeError(f"maxpool2d: input {h}x{w} smaller than window {window}")
    cropped = x.data[:, : ho * window, : wo * window, :]
    windows = cropped.reshape(n, ho, window, wo, window, c).transpose(0, 1, 3, 5, 2, 4)
    windows = windows.reshape(n, ho, wo, c, window * window)
    if not (_grad_enabled and x.requires_grad):
        return Tensor(windows.max(axis=-1))
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        dwin = np.zeros((n, ho, wo, c, window * window), dtype=g.dtype)
        np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
        dwin = dwin.reshape(n, ho, wo, c, window, window).transpose(0, 1, 4, 2, 5, 3)
        dx = np.zeros(x.shape, dtype=g.dtype)
        dx[:, : ho * window, : wo * window, :] = dwin.reshape(n, ho * window, wo * window, c)
        return (dx,)

    return record(out, (x,), backward)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Gradients accumulate into ``.grad`` of every reachable leaf that requires
    one.  Returns a map from leaf tensor to its gradient from this sweep; any
    tensor listed in ``params`` but not reached maps to zeros.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes or not t.requires_grad:
            continue
        nodes[id(t)] = t
        stack.extend(t._parents)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    result: dict[Tensor, np.ndarray] = {}
    for t in sorted(nodes.values(), key=lambda t: t._stamp, reverse=True):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.is_leaf:
            result[t] = g
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg

    for p in params or ():
        if p not in result:
            result[p] = np.zeros_like(p.data)
    return result
