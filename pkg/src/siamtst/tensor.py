"""Dense float64 tensors with reverse-mode automatic differentiation.

The operation set is deliberately small: exactly what a patch-token
transformer, its losses, and its training loop need. Everything runs in
64-bit so analytic gradients can be checked against central finite
differences at tight tolerance.

A computation graph is taped dynamically: every op records its parents and
a backward closure on the output tensor. ``backward()`` on a scalar root
walks the tape in reverse topological order and accumulates gradients
additively into every reachable ``requires_grad`` tensor.
"""

from __future__ import annotations

import math
import threading
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import special

__all__ = [
    "Tensor",
    "ShapeError",
    "GraphError",
    "no_grad",
    "matmul",
    "add",
    "mul",
    "softmax",
    "gelu",
    "transpose",
    "reshape",
    "concat",
    "stack",
    "masked_select",
    "dropout",
]

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an op's contract."""


class GraphError(RuntimeError):
    """Raised when backward() is called on an invalid root."""


# Per-thread tape switch. Inside ``no_grad`` blocks ops compute values
# only, which is how frozen-backbone feature extraction stays cheap.
# Thread-local so parallel per-sector jobs cannot disable each other's
# graph recording.
_grad_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


class no_grad:
    """Context manager that disables graph recording in this thread."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _grad_state.enabled = False
        return self

    def __exit__(self, *exc):
        _grad_state.enabled = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` over broadcast axes so it matches ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """N-dimensional float64 array with optional gradient tracking.

    ``data`` is treated as immutable after creation except by the
    optimizer; ``grad`` is the one mutable buffer and always matches
    ``data`` in shape once populated.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- autodiff ----------------------------------------------------------

    def backward(self):
        """Backpropagate from this scalar root.

        Gradients accumulate additively, both across multiple consumers
        within one graph and across repeated calls, until zeroed.
        """
        if self.data.size != 1:
            raise GraphError(f"backward() root must be scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen = set()
        stack_ = [(self, False)]
        while stack_:
            node, processed = stack_.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack_.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# -- elementwise arithmetic ------------------------------------------------


def _broadcast_forward(a: Tensor, b: Tensor, fn, opname: str) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError as err:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from err


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting (bias rows/columns included)."""
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = _broadcast_forward(a, b, np.add, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = _broadcast_forward(a, b, np.subtract, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = _broadcast_forward(a, b, np.multiply, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = _broadcast_forward(a, b, np.divide, "div")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _make(-a.data, (a,), backward)


def power(a, p: float) -> Tensor:
    """Raise to a python-scalar power."""
    a = _as_tensor(a)
    if isinstance(p, Tensor):
        raise TypeError("power() exponent must be a python scalar")
    out_data = a.data ** p

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1))

    return _make(out_data, (a,), backward)


# -- linear algebra --------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product. Operands must be at least 2-d; leading axes batch."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >= 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    try:
        out_data = a.data @ b.data
    except ValueError as err:
        raise ShapeError(f"matmul: batch axes of {a.shape} and {b.shape} do not align") from err

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), backward)


def transpose(a, axes=None) -> Tensor:
    """Permute axes; ``None`` reverses them (plain matrix transpose in 2-d)."""
    a = _as_tensor(a)
    if axes is None:
        perm = tuple(range(a.ndim - 1, -1, -1))
    else:
        perm = tuple(axes)
    inv = np.argsort(perm)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inv))

    return _make(np.transpose(a.data, perm), (a,), backward)


def swap_last(a) -> Tensor:
    """Swap the last two axes, keeping any batch axes in place."""
    a = _as_tensor(a)
    perm = list(range(a.ndim))
    perm[-1], perm[-2] = perm[-2], perm[-1]
    return transpose(a, perm)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old_shape = a.shape
    try:
        out_data = a.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"reshape: cannot view {old_shape} as {shape}") from err

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old_shape))

    return _make(out_data, (a,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: need at least one tensor")
    try:
        out_data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as err:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from err
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, offsets, axis=axis)
        for t, piece in zip(ts, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(out_data, ts, backward)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    """Stack along a new axis, built from reshape + concat."""
    ts = [_as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in ts]
    return concat(expanded, axis=axis)


# -- reductions ------------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.ascontiguousarray(_expand_reduced(g, a.shape, axis, keepdims)))

    return _make(out_data, (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out_data.size, 1)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.ascontiguousarray(_expand_reduced(g, a.shape, axis, keepdims)) / count)

    return _make(out_data, (a,), backward)


# -- nonlinearities --------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis``."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - inner))

    return _make(out_data, (a,), backward)


def gelu(a) -> Tensor:
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    a = _as_tensor(a)
    cdf = 0.5 * (1.0 + special.erf(a.data * _SQRT1_2))
    out_data = a.data * cdf

    def backward(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
            a._accumulate(g * (cdf + a.data * pdf))

    return _make(out_data, (a,), backward)


def masked_select(a, mask: np.ndarray) -> Tensor:
    """Select entries where ``mask`` is true, flattened to 1-d."""
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"masked_select: mask shape {mask.shape} != tensor shape {a.shape}")
    out_data = a.data[mask]

    def backward(g):
        if a.requires_grad:
            scatter = np.zeros_like(a.data)
            scatter[mask] = g
            a._accumulate(scatter)

    return _make(out_data, (a,), backward)


def dropout(a, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    a = _as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * keep)

    return _make(a.data * keep, (a,), backward)
