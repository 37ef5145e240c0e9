"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every primitive is a :class:`Function` subclass with an explicit ``forward``
and ``backward``. Calling ``Function.apply`` on tensors records a node whose
inputs are the argument tensors; :func:`backward` walks that record in reverse
topological order.

Gradient contract: :func:`backward` zeroes the ``grad`` of every leaf reachable
from the loss before accumulating, so two consecutive calls leave identical
gradients. Use :func:`grad` for a side-effect free variant.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

DTYPE = np.float64

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_fn", "_inputs", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._fn: Function | None = None
        self._inputs: tuple[Tensor, ...] = ()
        self.name = name

    # -- introspection ---------------------------------------------------
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
        return self._fn is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self):
        return self.shape[0]

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return Add.apply(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return Sub.apply(self, other)

    def __rsub__(self, other):
        return Sub.apply(other, self)

    def __mul__(self, other):
        return Mul.apply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Div.apply(self, other)

    def __rtruediv__(self, other):
        return Div.apply(other, self)

    def __neg__(self):
        return Neg.apply(self)

    def __matmul__(self, other):
        return MatMul.apply(self, other)

    def __pow__(self, exponent: float):
        return Pow.apply(self, exponent=float(exponent))

    def __getitem__(self, index):
        return getitem(self, index)

    # -- methods -----------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return Sum.apply(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis=None, keepdims: bool = False):
        return Max.apply(self, axis=axis, keepdims=keepdims)

    def exp(self):
        return Exp.apply(self)

    def log(self):
        return Log.apply(self)

    def sqrt(self):
        return Sqrt.apply(self)

    def tanh(self):
        return Tanh.apply(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes or None)

    @property
    def T(self):
        return Transpose.apply(self, axes=None)


def _not_scalar(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Function:
    """One primitive application. Subclasses implement forward/backward.

    ``forward`` receives raw arrays and the keyword arguments given to
    :meth:`apply`; values needed by ``backward`` are stashed on ``self``.
    ``backward`` returns one gradient (or ``None``) per tensor input.
    """

    def __init__(self, **kwargs):
        self.kwargs = kwargs

    def forward(self, *xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls(**kwargs)
        out = Tensor(fn.forward(*(t.data for t in tensors)))
        if is_grad_enabled() and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out._fn = fn
            out._inputs = tensors
        return out


# -- elementwise -------------------------------------------------------------


class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(g, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(-g, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return _unbroadcast(g * self.b, self.a.shape), _unbroadcast(g * self.a, self.b.shape)


class Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        ga = g / self.b
        gb = -g * self.a / (self.b * self.b)
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class Pow(Function):
    def forward(self, a):
        self.a = a
        return a ** self.kwargs["exponent"]

    def backward(self, g):
        p = self.kwargs["exponent"]
        return (g * p * self.a ** (p - 1.0),)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, g):
        return (g * self.out,)


class Log(Function):
    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, g):
        return (g / self.a,)


class Sqrt(Function):
    def forward(self, a):
        self.out = np.sqrt(a)
        return self.out

    def backward(self, g):
        return (g / (2.0 * self.out),)


class Tanh(Function):
    def forward(self, a):
        self.out = np.tanh(a)
        return self.out

    def backward(self, g):
        return (g * (1.0 - self.out * self.out),)


_GELU_C = np.sqrt(2.0 / np.pi)


class Gelu(Function):
    """tanh approximation of GELU; smooth everywhere, unlike ReLU."""

    def forward(self, a):
        self.a = a
        self.t = np.tanh(_GELU_C * (a + 0.044715 * (a * a * a)))
        return 0.5 * a * (1.0 + self.t)

    def backward(self, g):
        a, t = self.a, self.t
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * a * a)
        return (g * (0.5 * (1.0 + t) + 0.5 * a * dt),)


# -- linear algebra and layout -------------------------------------------------


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul operands must have rank >= 2")
        self.a, self.b = a, b
        return a @ b

    def backward(self, g):
        a, b = self.a, self.b
        ga = g @ np.swapaxes(b, -1, -2)
        if b.ndim == 2:
            # shared weight matrix: contract all leading axes in one GEMM
            gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class Reshape(Function):
    def forward(self, a):
        self.in_shape = a.shape
        return a.reshape(self.kwargs["shape"])

    def backward(self, g):
        return (g.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, a):
        axes = self.kwargs["axes"]
        self.axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
        return np.transpose(a, self.axes)

    def backward(self, g):
        return (np.transpose(g, np.argsort(self.axes)),)


class Slice(Function):
    """Basic (view-style) indexing: ints, slices, None, Ellipsis."""

    def forward(self, a):
        self.in_shape = a.shape
        return a[self.kwargs["index"]]

    def backward(self, g):
        out = np.zeros(self.in_shape, dtype=DTYPE)
        out[self.kwargs["index"]] = g
        return (out,)


class Gather(Function):
    """Select entries along ``axis`` with an integer index array (any shape).

    Used for embedding lookup (rows of a matrix) and for picking probability
    space positions out of flattened logits. Repeated indices accumulate.
    """

    def forward(self, a):
        self.in_shape = a.shape
        return np.take(a, self.kwargs["indices"], axis=self.kwargs["axis"])

    def backward(self, g):
        axis = self.kwargs["axis"] % len(self.in_shape)
        idx = np.asarray(self.kwargs["indices"])
        out = np.zeros(self.in_shape, dtype=DTYPE)
        moved = np.moveaxis(out, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        np.add.at(moved, idx, gm)
        return (out,)


class Concat(Function):
    def forward(self, *xs):
        axis = self.kwargs["axis"]
        self.sizes = [x.shape[axis] for x in xs]
        return np.concatenate(xs, axis=axis)

    def backward(self, g):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(g, cuts, axis=self.kwargs["axis"]))


# -- reductions ----------------------------------------------------------------


def _expand(g, in_shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, in_shape)


class Sum(Function):
    def forward(self, a):
        self.in_shape = a.shape
        return np.sum(a, axis=self.kwargs["axis"], keepdims=self.kwargs["keepdims"])

    def backward(self, g):
        return (_expand(g, self.in_shape, self.kwargs["axis"], self.kwargs["keepdims"]),)


class Max(Function):
    """Max reduction; tied maxima share the gradient equally."""

    def forward(self, a):
        axis = self.kwargs["axis"]
        self.a = a
        self.kept = np.max(a, axis=axis, keepdims=True)
        return self.kept if self.kwargs["keepdims"] else np.max(a, axis=axis)

    def backward(self, g):
        axis, keep = self.kwargs["axis"], self.kwargs["keepdims"]
        mask = (self.a == self.kept).astype(DTYPE)
        mask /= mask.sum(axis=axis, keepdims=True)
        return (_expand(g, self.a.shape, axis, keep) * mask,)


class Softmax(Function):
    def forward(self, a):
        axis = self.kwargs["axis"]
        z = np.exp(a - a.max(axis=axis, keepdims=True))
        self.out = z / z.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, g):
        s = self.out
        return (s * (g - (g * s).sum(axis=self.kwargs["axis"], keepdims=True)),)


class LogSoftmax(Function):
    def forward(self, a):
        axis = self.kwargs["axis"]
        shifted = a - a.max(axis=axis, keepdims=True)
        self.out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        return self.out

    def backward(self, g):
        axis = self.kwargs["axis"]
        return (g - np.exp(self.out) * g.sum(axis=axis, keepdims=True),)


class LogSumExp(Function):
    def forward(self, a):
        axis, keep = self.kwargs["axis"], self.kwargs["keepdims"]
        m = a.max(axis=axis, keepdims=True)
        out = m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))
        self.a, self.kept = a, out
        return out if keep else np.squeeze(out, axis=axis) if axis is not None else out.reshape(())

    def backward(self, g):
        axis, keep = self.kwargs["axis"], self.kwargs["keepdims"]
        if axis is None:
            g = np.reshape(g, (1,) * self.a.ndim)
        elif not keep:
            g = np.expand_dims(g, axis)
        return (g * np.exp(self.a - self.kept),)


class LayerNorm(Function):
    """Normalise over the last axis (no affine part)."""

    def forward(self, a):
        eps = self.kwargs["eps"]
        mu = a.mean(axis=-1, keepdims=True)
        xc = a - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + eps)
        self.xhat = xc * self.inv
        return self.xhat

    def backward(self, g):
        xhat, inv = self.xhat, self.inv
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)


# -- functional API --------------------------------------------------------------


def add(a, b):
    return Add.apply(a, b)


def mul(a, b):
    return Mul.apply(a, b)


def matmul(a, b):
    return MatMul.apply(a, b)


def exp(x):
    return Exp.apply(x)


def log(x):
    return Log.apply(x)


def sqrt(x):
    return Sqrt.apply(x)


def gelu(x):
    return Gelu.apply(x)


def reduce_sum(x, axis=None, keepdims=False):
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def reduce_max(x, axis=None, keepdims=False):
    return Max.apply(x, axis=axis, keepdims=keepdims)


def _check_axis(x: Tensor, axis: int):
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for rank-{x.ndim} tensor")


def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    x = as_tensor(x)
    _check_axis(x, axis)
    return Softmax.apply(x, axis=axis)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    _check_axis(x, axis)
    return LogSoftmax.apply(x, axis=axis)


def logsumexp(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is not None:
        _check_axis(x, axis)
    return LogSumExp.apply(x, axis=axis, keepdims=keepdims)


def layer_norm(x, eps: float = 1e-6) -> Tensor:
    return LayerNorm.apply(x, eps=eps)


def gather(x, indices, axis: int = 0) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    return Gather.apply(x, indices=idx, axis=axis)


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; ``ids`` may have any shape."""
    return gather(table, ids, axis=0)


def concatenate(tensors, axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def getitem(x: Tensor, index) -> Tensor:
    parts = index if isinstance(index, tuple) else (index,)
    fancy = [p for p in parts if isinstance(p, (list, np.ndarray, Tensor))]
    if not fancy:
        return Slice.apply(x, index=index)
    if len(parts) == 1:
        return gather(x, parts[0], axis=0)
    raise TypeError("advanced indexing is limited to a single leading index array; use gather()")


# -- differentiation -----------------------------------------------------------------


class Graph:
    """Topologically ordered record of the primitive applications behind ``output``."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = _toposort(output)

    @property
    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf]

    def replay(self) -> np.ndarray:
        """Recompute every node from the current leaf values; returns the output."""
        values: dict[int, np.ndarray] = {}
        for node in self.nodes:
            if node.is_leaf:
                values[id(node)] = node.data
            else:
                fn = type(node._fn)(**node._fn.kwargs)
                values[id(node)] = fn.forward(*(values[id(t)] for t in node._inputs))
        return values[id(self.output)]


def _toposort(output: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._inputs):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _check_loss(loss: Tensor):
    if not isinstance(loss, Tensor):
        raise TypeError("loss must be a Tensor")
    if loss.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not part of a recorded graph (no input requires grad)")


def _propagate(loss: Tensor) -> tuple[list[Tensor], dict[int, np.ndarray]]:
    _check_loss(loss)
    nodes = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    for node in reversed(nodes):
        g = grads.get(id(node))
        if g is None or node.is_leaf:
            continue
        in_grads = node._fn.backward(g)
        for parent, pg in zip(node._inputs, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return nodes, grads


def backward(loss: Tensor) -> None:
    """Fill ``.grad`` of every requires-grad leaf feeding ``loss``.

    Leaf gradients are reset first; nothing accumulates across calls.
    """
    nodes, grads = _propagate(loss)
    for node in nodes:
        if node.is_leaf and node.requires_grad:
            g = grads.get(id(node))
            node.grad = np.zeros_like(node.data) if g is None else np.array(g, dtype=DTYPE).reshape(node.shape)


def grad(loss: Tensor, wrt) -> list[np.ndarray]:
    """Gradients of ``loss`` with respect to each tensor in ``wrt`` (no side effects)."""
    _, grads = _propagate(loss)
    out = []
    for t in wrt:
        g = grads.get(id(t))
        out.append(np.zeros_like(t.data) if g is None else np.array(g, dtype=DTYPE).reshape(t.shape))
    return out
