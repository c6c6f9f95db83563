"""Minimal reverse-mode tape over float64 numpy arrays.

Every differentiable step of the training graph is built from the ops in this
module. Values are 0-d scalars, 1-d vectors or 2-d matrices; gradients are
accumulated by walking the recorded graph in reverse topological order.
Backward rules here are the ones verified against central finite differences
(see numcore.finite_diff_check and the gradcheck module).
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad, shape):
    """Sum `grad` back down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the recorded computation graph.

    `value` is always a float64 ndarray. Leaves created with
    ``requires_grad=True`` receive accumulated gradients in ``grad`` after
    calling :meth:`backward` on a downstream scalar.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    # make numpy defer to the reflected operators below instead of trying to
    # broadcast a Tensor elementwise
    __array_ufunc__ = None

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        def bk(g):
            return (g.T,)

        return _op(self.value.T, (self,), bk)

    def detach(self):
        return Tensor(self.value)

    # ---- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = astensor(other)

        def bk(g):
            return (_unbroadcast(g, self.value.shape), _unbroadcast(g, other.value.shape))

        return _op(self.value + other.value, (self, other), bk)

    __radd__ = __add__

    def __neg__(self):
        def bk(g):
            return (-g,)

        return _op(-self.value, (self,), bk)

    def __sub__(self, other):
        return self + (-astensor(other))

    def __rsub__(self, other):
        return astensor(other) + (-self)

    def __mul__(self, other):
        other = astensor(other)

        def bk(g):
            return (
                _unbroadcast(g * other.value, self.value.shape) if self.requires_grad else None,
                _unbroadcast(g * self.value, other.value.shape) if other.requires_grad else None,
            )

        return _op(self.value * other.value, (self, other), bk)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = astensor(other)

        def bk(g):
            return (
                _unbroadcast(g / other.value, self.value.shape),
                _unbroadcast(-g * self.value / (other.value * other.value), other.value.shape),
            )

        return _op(self.value / other.value, (self, other), bk)

    def __rtruediv__(self, other):
        return astensor(other) / self

    def __pow__(self, exponent):
        p = float(exponent)

        def bk(g):
            return (g * p * self.value ** (p - 1.0),)

        return _op(self.value**p, (self,), bk)

    def __matmul__(self, other):
        other = astensor(other)

        def bk(g):
            return (
                g @ other.value.T if self.requires_grad else None,
                self.value.T @ g if other.requires_grad else None,
            )

        return _op(self.value @ other.value, (self, other), bk)

    def __getitem__(self, index):
        def bk(g):
            out = np.zeros_like(self.value)
            if isinstance(index, slice):
                out[index] = g  # a slice never repeats positions
            else:
                np.add.at(out, index, g)
            return (out,)

        return _op(self.value[index], (self,), bk)

    # ---- reductions and reshaping ----------------------------------------

    def sum(self, axis=None, keepdims=False):
        def bk(g):
            if axis is None:
                return (np.broadcast_to(g, self.value.shape).copy(),)
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.value.shape).copy(),)

        return _op(self.value.sum(axis=axis, keepdims=keepdims), (self,), bk)

    def mean(self, axis=None, keepdims=False):
        count = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        def bk(g):
            return (g.reshape(self.value.shape),)

        return _op(self.value.reshape(*shape), (self,), bk)

    def clip(self, lo, hi):
        inside = (self.value > lo) & (self.value < hi)

        def bk(g):
            return (g * inside,)

        return _op(np.clip(self.value, lo, hi), (self,), bk)

    # ---- graph walk -------------------------------------------------------

    def backward(self, seed=None):
        """Accumulate gradients of this tensor into every reachable leaf."""
        if seed is None:
            seed = np.ones_like(self.value)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.asarray(seed, dtype=np.float64)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, grad in zip(node._parents, node._backward(node.grad)):
                if grad is None or not parent.requires_grad:
                    continue
                parent.grad = grad if parent.grad is None else parent.grad + grad


def _op(value, parents, backward):
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def astensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value):
    """Leaf tensor that accumulates gradients."""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def exp(x):
    x = astensor(x)
    out_value = np.exp(x.value)

    def bk(g):
        return (g * out_value,)

    return _op(out_value, (x,), bk)


def log(x):
    x = astensor(x)

    def bk(g):
        return (g / x.value,)

    return _op(np.log(x.value), (x,), bk)


def sqrt(x):
    x = astensor(x)
    out_value = np.sqrt(x.value)

    def bk(g):
        return (g * 0.5 / out_value,)

    return _op(out_value, (x,), bk)


def tanh(x):
    x = astensor(x)
    out_value = np.tanh(x.value)

    def bk(g):
        return (g * (1.0 - out_value * out_value),)

    return _op(out_value, (x,), bk)


def sigmoid(x):
    x = astensor(x)
    # clipping keeps exp in range; the result saturates to 0/1 well before 500
    out_value = 1.0 / (1.0 + np.exp(-np.clip(x.value, -500.0, 500.0)))

    def bk(g):
        return (g * out_value * (1.0 - out_value),)

    return _op(out_value, (x,), bk)


def concat(tensors, axis=0):
    tensors = [astensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bk(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(tensors)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return _op(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors), bk)


def normalize_rows(x):
    """Divide each row by its Euclidean norm, differentiably."""
    x = astensor(x)
    norms = sqrt((x * x).sum(axis=1, keepdims=True))
    return x / norms
