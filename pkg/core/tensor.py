"""Tensor - dense float arrays with reverse-mode automatic differentiation.

Every differentiable operation returns a new Tensor that remembers its parents
and a closure mapping the output gradient to one gradient per parent. The graph
is only materialised (as a topologically ordered `Graph`) when `backward()` runs,
and it is cleared afterwards so nothing leaks across training steps.
"""

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import ContractError, DimensionError

ArrayLike = Union["Tensor", np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_state = threading.local()


def default_dtype() -> type:
    return getattr(_state, "dtype", np.float32)


@contextmanager
def precision(dtype: type) -> Iterator[None]:
    """Build tensors in `dtype` in the current thread; float64 is used by gradient checks."""
    previous = default_dtype()
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = previous


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """Row-major float32 (or `precision`) array with an optional gradient buffer."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.ascontiguousarray(np.asarray(data, dtype=default_dtype()))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op = "leaf"
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        out = cls(data)
        out.op = op
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{req}{nm})"

    def backward(self) -> None:
        """Fill `.grad` of every leaf reachable from this scalar that requires it."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        graph = Graph.trace(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(graph.nodes):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.array(grad, dtype=node.data.dtype, copy=True)
                    else:
                        node.grad += grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = parent_grad
        graph.clear()

    # operator sugar
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return getitem(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data: ArrayLike, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


class Graph:
    """Topologically ordered record of the operations behind one tensor."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
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
        return cls(order)

    def op_names(self) -> List[str]:
        return [node.op for node in self.nodes]

    def __contains__(self, op: str) -> bool:
        return op in self.op_names()

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        for node in self.nodes:
            node._parents = ()
            node._backward = None


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a, b))
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast shapes {a} and {b}") from exc


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)

    def backward(g: np.ndarray):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), backward, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)

    def backward(g: np.ndarray):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return Tensor._make(a.data - b.data, (a, b), backward, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)

    def backward(g: np.ndarray):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return Tensor._make(a.data * b.data, (a, b), backward, "mul")


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, factor: float) -> Tensor:
    factor = a.data.dtype.type(factor)
    return Tensor._make(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    broadcast_shape(a.shape[:-2], b.shape[:-2])

    def backward(g: np.ndarray):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)

    return Tensor._make(a.data @ b.data, (a, b), backward, "matmul")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {tuple(shape)}") from exc
    return Tensor._make(data, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def swapaxes(a: Tensor, first: int, second: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[first], axes[second] = axes[second], axes[first]
    return transpose(a, axes)


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, slice, type(Ellipsis))) or p is None for p in parts)


def getitem(a: Tensor, index) -> Tensor:
    basic = _is_basic_index(index)

    def backward(g: np.ndarray):
        grad = np.zeros_like(a.data)
        if basic:
            grad[index] += g
        else:
            np.add.at(grad, index, g)
        return (grad,)

    return Tensor._make(a.data[index], (a,), backward, "getitem")


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; repeated ids accumulate their gradients."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"row ids must lie in [0, {table.shape[0]}), got range [{ids.min()}, {ids.max()}]")

    def backward(g: np.ndarray):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return Tensor._make(table.data[ids], (table,), backward, "take_rows")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(data, tensors, backward, "concat")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._make(np.asarray(data, dtype=a.data.dtype), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)
