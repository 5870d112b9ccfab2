# app/models/tensor.py
"""Dense tensors with define-by-run reverse-mode autodiff.

Every differentiable operation records a ``Node`` on its output when at least
one input needs a gradient. ``backward`` orders the reachable nodes into a
``Graph`` and walks it once in reverse; afterwards the graph is consumed and
its saved inputs are released.
"""
import contextlib
import logging

import numpy as np
from scipy.special import expit

from app.errors import GraphError, ShapeError

logger = logging.getLogger(__name__)

_dtype_stack = [np.float32]


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype new tensors and parameters are built with"""
    _dtype_stack.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _dtype_stack.pop()


def get_default_dtype():
    return _dtype_stack[-1]


class Node:
    """One executed differentiable operation and what it saved for backward"""

    __slots__ = ('op', 'parents', 'backward_fn', 'consumed')

    def __init__(self, op, parents, backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.consumed = False

    def release(self):
        self.backward_fn = None
        self.consumed = True


class Tensor:
    """Immutable dense array, rank 0 (losses) up to rank 4"""

    __array_priority__ = 100

    def __init__(self, data, dtype=None):
        arr = np.array(data, dtype=dtype or get_default_dtype())
        if arr.ndim > 4:
            raise ShapeError(f"Tensors are at most rank 4, got shape {arr.shape}")
        if any(dim < 1 for dim in arr.shape):
            raise ShapeError(f"All tensor dimensions must be >= 1, got shape {arr.shape}")
        arr.flags.writeable = False
        self.data = arr
        self._node = None

    @classmethod
    def _wrap(cls, arr, node=None):
        t = Tensor.__new__(Tensor)
        arr = np.asarray(arr)
        arr.flags.writeable = False
        t.data = arr
        t._node = node
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def requires_grad(self):
        return self._node is not None

    def numpy(self):
        return np.array(self.data)

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor._wrap(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("Only division by a scalar is supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


class Parameter(Tensor):
    """Trainable weight with a gradient slot of the same shape"""

    def __init__(self, data, trainable=True, dtype=None):
        super().__init__(data, dtype=dtype)
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    @property
    def requires_grad(self):
        return self.trainable

    @property
    def value(self):
        return self

    def assign(self, new_value):
        arr = np.array(new_value, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise ShapeError(f"Cannot assign shape {arr.shape} to parameter of shape {self.data.shape}")
        arr.flags.writeable = False
        self.data = arr

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter(shape={self.shape}, dtype={self.dtype}, trainable={self.trainable})"


class Graph:
    """Reachable tensors of one forward pass in topological order"""

    def __init__(self, order):
        self.order = order

    @classmethod
    def from_output(cls, output):
        order = []
        seen = set()
        stack = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in seen:
                continue
            seen.add(id(tensor))
            stack.append((tensor, True))
            node = tensor._node
            if node is None:
                continue
            if node.consumed:
                raise GraphError(f"Graph already consumed: '{node.op}' was released by an earlier backward pass")
            for parent in node.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.order)

    def run(self, output, seed_grad):
        grads = {id(output): seed_grad}
        for tensor in reversed(self.order):
            grad = grads.pop(id(tensor), None)
            node = tensor._node
            if node is not None:
                if grad is not None:
                    parent_grads = node.backward_fn(grad)
                    for parent, parent_grad in zip(node.parents, parent_grads):
                        if parent_grad is None or not parent.requires_grad:
                            continue
                        key = id(parent)
                        if key in grads:
                            grads[key] = grads[key] + parent_grad
                        else:
                            grads[key] = parent_grad
                node.release()
            elif grad is not None and isinstance(tensor, Parameter) and tensor.trainable:
                tensor.grad = tensor.grad + grad.astype(tensor.grad.dtype, copy=False)


def backward(loss):
    """Accumulate d(loss)/d(value) into every reachable trainable Parameter.

    Callers zero the gradients they care about first, so parameters the loss
    does not reach read zero afterwards.
    """
    if not isinstance(loss, Tensor):
        raise GraphError(f"backward expects a Tensor, got {type(loss).__name__}")
    if loss.size != 1:
        raise GraphError(f"Loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("Loss does not depend on any trainable parameter")
    if loss._node is not None and loss._node.consumed:
        raise GraphError("Graph already consumed by a previous backward pass")
    graph = Graph.from_output(loss)
    graph.run(loss, np.ones_like(loss.data))
    return graph


def _record(data, parents, backward_fn, op):
    if any(p.requires_grad for p in parents):
        return Tensor._wrap(data, Node(op, tuple(parents), backward_fn))
    return Tensor._wrap(data)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")


# Elementwise

def add(a, b):
    if not isinstance(b, Tensor):
        scalar = float(b)
        return _record(a.data + a.data.dtype.type(scalar), (a,), lambda g: (g,), 'add_scalar')
    _check_same_shape(a, b, 'add')
    return _record(a.data + b.data, (a, b), lambda g: (g, g), 'add')


def sub(a, b):
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _check_same_shape(a, b, 'sub')
    return _record(a.data - b.data, (a, b), lambda g: (g, -g), 'sub')


def neg(a):
    return _record(-a.data, (a,), lambda g: (-g,), 'neg')


def mul(a, b):
    if not isinstance(b, Tensor):
        scalar = a.data.dtype.type(float(b))
        return _record(a.data * scalar, (a,), lambda g: (g * scalar,), 'mul_scalar')
    _check_same_shape(a, b, 'mul')
    a_data, b_data = a.data, b.data
    return _record(a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data), 'mul')


def sin(a):
    x = a.data
    return _record(np.sin(x), (a,), lambda g: (g * np.cos(x),), 'sin')


def tanh(a):
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1 - y * y),), 'tanh')


def sigmoid(a):
    y = expit(a.data).astype(a.dtype, copy=False)
    return _record(y, (a,), lambda g: (g * y * (1 - y),), 'sigmoid')


def relu(a):
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), 'relu')


def leaky_relu(a, slope=0.1):
    if not 0 < slope < 1:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    x = a.data
    factor = np.where(x >= 0, 1, slope).astype(a.dtype)
    return _record(x * factor, (a,), lambda g: (g * factor,), 'leaky_relu')


def abs(a):
    x = a.data
    return _record(np.abs(x), (a,), lambda g: (g * np.sign(x),), 'abs')


def square(a):
    x = a.data
    return _record(x * x, (a,), lambda g: (g * 2 * x,), 'square')


def sqrt(a):
    y = np.sqrt(a.data)
    return _record(y, (a,), lambda g: (g / (2 * y),), 'sqrt')


def exp(a):
    y = np.exp(a.data)
    return _record(y, (a,), lambda g: (g * y,), 'exp')


def log(a):
    x = a.data
    return _record(np.log(x), (a,), lambda g: (g / x,), 'log')


def clamp_min(a, minimum):
    x = a.data
    mask = x > minimum
    return _record(np.maximum(x, a.dtype.type(minimum)), (a,), lambda g: (g * mask,), 'clamp_min')


def cumsum(a):
    """Prefix sum over the last (time) axis"""
    def grad_fn(g):
        return (np.flip(np.cumsum(np.flip(g, -1), axis=-1), -1),)

    return _record(np.cumsum(a.data, axis=-1), (a,), grad_fn, 'cumsum')


# Reductions

def sum_all(a):
    shape = a.shape
    return _record(np.asarray(a.data.sum(dtype=a.dtype)), (a,),
                   lambda g: (np.broadcast_to(g, shape).astype(g.dtype),), 'sum')


def mean(a):
    shape, n = a.shape, a.size
    return _record(np.asarray(a.data.mean(dtype=a.dtype)), (a,),
                   lambda g: (np.broadcast_to(g / n, shape).astype(g.dtype),), 'mean')


# Shape manipulation

def reshape(a, shape):
    original = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),), 'reshape')


def transpose(a, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), 'transpose')


def expand(a, shape):
    """Broadcast size-1 axes up to ``shape``"""
    shape = tuple(shape)
    if a.ndim != len(shape) or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise ShapeError(f"Cannot expand shape {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)

    def grad_fn(g):
        return (g.sum(axis=axes, keepdims=True),)

    return _record(np.ascontiguousarray(np.broadcast_to(a.data, shape)), (a,), grad_fn, 'expand')


def concat(tensors, axis):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, grad_fn, 'concat')


def slice_axis(a, axis, start, stop):
    length = a.shape[axis]
    if not 0 <= start < stop <= length:
        raise ShapeError(f"Slice [{start}:{stop}] out of range for axis {axis} of length {length}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = a.shape

    def grad_fn(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _record(np.ascontiguousarray(a.data[index]), (a,), grad_fn, 'slice')


def slice_time(a, start, stop):
    return slice_axis(a, a.ndim - 1, start, stop)
