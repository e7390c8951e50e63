"""
avae/tensor.py

Reverse-mode automatic differentiation over dense numpy arrays.
Includes:
- Tensor (values, gradients, operation records, backward pass)
- precision (single precision for training, double precision for gradient checks)
- conv2d, linear, elu, sigmoid, downsample, upsample, l1_mean, cross_entropy
- element-wise arithmetic, exp, clamp, sum, mean, reshape
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

import numpy as np
from dotenv import load_dotenv
from numpy.lib.stride_tricks import sliding_window_view

from avae.errors import DimensionError, NumericError, UsageError

# ============================================================
# Environment setup
# ============================================================

load_dotenv()
CHECK_NUMERICS = os.getenv("AVAE_CHECK_NUMERICS", "1").strip().lower() not in ("0", "false", "no", "off")

_DTYPE: ContextVar[type] = ContextVar("avae_dtype", default=np.float32)

Scalar = Union[int, float]
Grads = tuple[Optional[np.ndarray], ...]
BackwardFn = Callable[[np.ndarray, tuple[bool, ...]], Grads]


def get_dtype() -> type:
    return _DTYPE.get()


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Create new tensors in `dtype` (np.float32 or np.float64) inside the block."""
    token = _DTYPE.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.reset(token)


# ============================================================
# Tensor
# ============================================================


class Tensor:
    """
    n-dimensional array with an optional gradient.

    Tensors produced by operations remember their inputs and a local gradient rule;
    calling backward() on a scalar walks that record in reverse topological order.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        self.data = np.array(data, dtype=dtype or get_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = "leaf"

    # -----------------------------
    # Introspection
    # -----------------------------
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
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item: expected a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.name = self.name
        out._parents = ()
        out._backward = None
        out._op = "detach"
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op}{label}, requires_grad={self.requires_grad})"

    # -----------------------------
    # Backward pass
    # -----------------------------
    def backward(self, grad: Optional[np.ndarray] = None, inputs: Optional[Iterable["Tensor"]] = None) -> None:
        """
        Accumulate d(self)/d(leaf) into leaf.grad.

        Args:
            grad: upstream gradient; defaults to 1 for single-element tensors.
            inputs: restrict accumulation to these leaves; branches that cannot
                reach them are not traversed.
        """
        if not self.requires_grad:
            raise UsageError("backward: tensor does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise UsageError(f"backward: implicit gradient needs a single-element output, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.shape:
                raise DimensionError(f"backward: gradient shape {grad.shape} does not match {self.shape}")

        order = _topological_order(self)
        targets = None if inputs is None else {id(t) for t in inputs}

        reaches: dict[int, bool] = {}
        for node in order:
            if node.is_leaf:
                reaches[id(node)] = node.requires_grad and (targets is None or id(node) in targets)
            else:
                reaches[id(node)] = any(reaches[id(p)] for p in node._parents)

        pending: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None or not reaches[id(node)]:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            needs = tuple(reaches[id(p)] for p in node._parents)
            for parent, parent_grad, need in zip(node._parents, node._backward(g, needs), needs):
                if not need or parent_grad is None:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad

    # -----------------------------
    # Operators
    # -----------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UsageError("division is only defined by a scalar")
        return mul(self, 1.0 / other)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return tensor_sum(self, axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        return mean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    if CHECK_NUMERICS and not np.all(np.isfinite(data)):
        raise NumericError(f"{op}: produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents) if out.requires_grad else ()
    out._backward = backward if out.requires_grad else None
    out._op = op
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _check_rank(x: Tensor, rank: int, op: str) -> None:
    if x.ndim != rank:
        raise DimensionError(f"{op}: expected a rank-{rank} tensor, got shape {x.shape}")


# ============================================================
# Element-wise operations
# ============================================================


def add(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    if not isinstance(b, Tensor):
        return _result(a.data + b, (a,), lambda g, needs: (g,), "add")
    _check_same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g, needs: (g, g), "add")


def sub(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    if not isinstance(b, Tensor):
        return _result(a.data - b, (a,), lambda g, needs: (g,), "sub")
    _check_same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g, needs: (g, -g), "sub")


def mul(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    if not isinstance(b, Tensor):
        scale = b
        return _result(a.data * scale, (a,), lambda g, needs: (g * scale,), "mul")
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g, needs):
        return (g * bd if needs[0] else None, g * ad if needs[1] else None)

    return _result(ad * bd, (a, b), backward, "mul")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _result(y, (x,), lambda g, needs: (g * y,), "exp")


def elu(x: Tensor) -> Tensor:
    xd = x.data
    negative = np.expm1(np.minimum(xd, 0))
    y = np.where(xd > 0, xd, negative)

    def backward(g, needs):
        return (g * np.where(xd > 0, 1.0, negative + 1.0),)

    return _result(y, (x,), backward, "elu")


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), lambda g, needs: (g * y * (1.0 - y),), "sigmoid")


def clamp(x: Tensor, low: float, high: float) -> Tensor:
    xd = x.data
    inside = (xd >= low) & (xd <= high)
    return _result(np.clip(xd, low, high), (x,), lambda g, needs: (g * inside,), "clamp")


# ============================================================
# Reductions and reshaping
# ============================================================


def tensor_sum(x: Tensor, axis: Optional[int] = None) -> Tensor:
    shape = x.shape

    def backward(g, needs):
        if axis is None:
            return (np.broadcast_to(g, shape),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return _result(np.asarray(x.data.sum(axis=axis)), (x,), backward, "sum")


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    return mul(tensor_sum(x, axis), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    y = x.data.reshape(shape)
    return _result(y, (x,), lambda g, needs: (g.reshape(original),), "reshape")


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


# ============================================================
# Layers
# ============================================================


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map of a [B, D] batch by a [D, O] weight and optional [O] bias."""
    _check_rank(x, 2, "linear")
    _check_rank(weight, 2, "linear")
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: input width {x.shape[1]} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    y = xd @ wd
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (wd.shape[1],):
            raise DimensionError(f"linear: bias shape {bias.shape} does not match output width {wd.shape[1]}")
        y = y + bias.data
        parents.append(bias)

    def backward(g, needs):
        grads = [g @ wd.T if needs[0] else None, xd.T @ g if needs[1] else None]
        if bias is not None:
            grads.append(g.sum(axis=0) if needs[2] else None)
        return tuple(grads)

    return _result(y, parents, backward, "linear")


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0, bias: Optional[Tensor] = None) -> Tensor:
    """
    2-D cross-correlation of [B, C, H, W] by [F, C, k, k].

    Output spatial size is floor((H + 2*padding - k) / stride) + 1.
    """
    _check_rank(x, 4, "conv2d")
    _check_rank(kernel, 4, "conv2d")
    if stride < 1 or padding < 0:
        raise UsageError(f"conv2d: stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    batch, channels, height, width = x.shape
    filters, kernel_channels, k, k_w = kernel.shape
    if channels != kernel_channels:
        raise DimensionError(f"conv2d: input has {channels} channels but kernel expects {kernel_channels}")
    if k != k_w:
        raise DimensionError(f"conv2d: kernel must be square, got {k}x{k_w}")
    if k > height + 2 * padding or k > width + 2 * padding:
        raise DimensionError(f"conv2d: kernel {k} larger than padded input {height}x{width} (padding {padding})")

    xd, wd = x.data, kernel.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    y = np.tensordot(windows, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = [x, kernel]
    if bias is not None:
        if bias.shape != (filters,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {filters} filters")
        y = y + bias.data[None, :, None, None]
        parents.append(bias)
    y = np.ascontiguousarray(y)

    def backward(g, needs):
        grad_x = grad_w = None
        if needs[0]:
            cols = np.tensordot(g, wd, axes=([1], [0]))  # B, Ho, Wo, C, k, k
            grad_xp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    grad_xp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += (
                        cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            grad_x = grad_xp[:, :, padding:padding + height, padding:padding + width] if padding else grad_xp
        if needs[1]:
            grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)) if needs[2] else None)
        return tuple(grads)

    return _result(y, parents, backward, "conv2d")


def downsample(x: Tensor) -> Tensor:
    """2x2 mean pooling."""
    _check_rank(x, 4, "downsample")
    batch, channels, height, width = x.shape
    if height % 2 or width % 2:
        raise DimensionError(f"downsample: spatial size must be even, got {height}x{width}")
    r = x.data.reshape(batch, channels, height // 2, 2, width // 2, 2)
    y = ((r[:, :, :, 0, :, 0] + r[:, :, :, 0, :, 1]) + (r[:, :, :, 1, :, 0] + r[:, :, :, 1, :, 1])) * 0.25

    def backward(g, needs):
        return (np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3),)

    return _result(y, (x,), backward, "downsample")


def upsample(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x replication."""
    _check_rank(x, 4, "upsample")
    batch, channels, height, width = x.shape
    y = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g, needs):
        return (g.reshape(batch, channels, height, 2, width, 2).sum(axis=(3, 5)),)

    return _result(y, (x,), backward, "upsample")


# ============================================================
# Losses
# ============================================================


def l1_mean(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference; the subgradient at a tie is 0."""
    _check_same_shape(a, b, "l1_mean")
    diff = a.data - b.data
    y = np.asarray(np.abs(diff).mean(), dtype=diff.dtype)

    def backward(g, needs):
        sign = np.sign(diff) * (g / diff.size)
        return (sign if needs[0] else None, -sign if needs[1] else None)

    return _result(y, (a, b), backward, "l1_mean")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer `labels` under softmax(logits)."""
    _check_rank(logits, 2, "cross_entropy")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: {labels.shape[0]} labels for {logits.shape[0]} rows")
    ld = logits.data
    shifted = ld - ld.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(ld.shape[0])
    y = np.asarray(-log_probs[rows, labels].mean(), dtype=ld.dtype)

    def backward(g, needs):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (grad * (g / ld.shape[0]),)

    return _result(y, (logits,), backward, "cross_entropy")
