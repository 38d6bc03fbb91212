"""Dense float64 tensors with reverse-mode gradients over a closed op set.

The differentiable primitives are: matmul, add, mul, relu, softmax, log,
mean, and broadcasting inside add/mul. reshape is a structural op (row-major
retag of the same flat data; its gradient is the inverse retag). Everything
else in the package is composed from these, e.g. column concatenation is a
pair of matmuls with constant 0/1 selector matrices.

Tensors are immutable values: the wrapped array is marked non-writeable and
ops return fresh tensors, so sharing across threads is safe. Every public op
checks its result for NaN/Inf and raises NonFiniteError on violation.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

Shape = tuple[int, ...]


class NonFiniteError(ArithmeticError):
    """A public tensor operation produced NaN or Inf."""


def _as_array(values, shape=None) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, order="C")
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")
    return arr


def _unbroadcast(grad: np.ndarray, shape: Shape) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Shape-tagged row-major float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        if isinstance(values, Tensor):
            values = values.data
        arr = _as_array(values)
        _check_finite(arr, "tensor construction")
        arr.setflags(write=False)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # ------------------------------------------------------------------

    @property
    def shape(self) -> Shape:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # graph plumbing ----------------------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents: tuple["Tensor", ...], backward, op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        _check_finite(data, op)
        # np.ascontiguousarray would promote 0-d results to 1-d
        data = np.asarray(data, dtype=np.float64, order="C")
        data.setflags(write=False)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        return out

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Reverse-mode pass from a scalar root; accumulates into .grad."""
        if self.data.shape != ():
            raise ValueError("backward() requires a scalar root")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                topo.append(node)
                continue
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self._accumulate(np.ones((), dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # arithmetic --------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other) -> "Tensor":
        return add(self, mul(other, -1.0))

    def __rsub__(self, other) -> "Tensor":
        return add(mul(self, -1.0), other)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- closed op set ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out_data = a.data + b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._node(out_data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out_data = a.data * b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._node(out_data, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._node(out_data, (a, b), backward, "matmul")


def relu(a) -> Tensor:
    a = _coerce(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    return Tensor._node(out_data, (a,), backward, "relu")


def log(a) -> Tensor:
    a = _coerce(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(a.data)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g / a.data)

    return Tensor._node(out_data, (a,), backward, "log")


def softmax(a) -> Tensor:
    """Row-wise softmax over the last axis; shift-invariant and stable."""
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            s = out_data
            inner = (g * s).sum(axis=-1, keepdims=True)
            a._accumulate(s * (g - inner))

    return Tensor._node(out_data, (a,), backward, "softmax")


def mean(a) -> Tensor:
    """Full reduction to a scalar."""
    a = _coerce(a)
    n = a.size
    out_data = np.asarray(a.data.mean())

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(np.full(a.shape, float(g) / n))

    return Tensor._node(out_data, (a,), backward, "mean")


def reshape(a, shape) -> Tensor:
    """Row-major retag of the flat data; gradient is the inverse retag."""
    a = _coerce(a)
    shape = tuple(shape)
    out_data = a.data.reshape(shape)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return Tensor._node(out_data, (a,), backward, "reshape")


# -- compositions -------------------------------------------------------


def tsum(a) -> Tensor:
    a = _coerce(a)
    return mul(mean(a), float(a.size))


def square(a) -> Tensor:
    a = _coerce(a)
    return mul(a, a)


_selector_cache: dict[tuple[int, ...], np.ndarray] = {}


def _selector(width: int, offset: int, total: int) -> np.ndarray:
    key = (width, offset, total)
    sel = _selector_cache.get(key)
    if sel is None:
        sel = np.zeros((width, total))
        sel[np.arange(width), offset + np.arange(width)] = 1.0
        _selector_cache[key] = sel
    return sel


def concat_cols(parts: Iterable[Tensor]) -> Tensor:
    """Column concat of 2-d tensors, composed from selector matmuls."""
    parts = [_coerce(p) for p in parts]
    if not parts or any(p.data.ndim != 2 for p in parts):
        raise ValueError("concat_cols expects one or more 2-d tensors")
    total = sum(p.shape[1] for p in parts)
    out = None
    offset = 0
    for p in parts:
        placed = matmul(p, Tensor(_selector(p.shape[1], offset, total)))
        out = placed if out is None else add(out, placed)
        offset += p.shape[1]
    return out
