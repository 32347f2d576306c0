"""Dense-tensor computational graph with reverse-mode automatic differentiation.

Every operation records a node holding the numpy result, references to its
parent nodes, and a closure that routes the upstream gradient to the parents.
``backward`` walks the graph in reverse topological order and accumulates
gradients additively into leaves; the caller resets them between optimizer
steps. All values are 64-bit floats.

Nodes created through ``constant`` (and plain numbers/arrays appearing in
expressions) are marked const; backward prunes const subgraphs, so large
fixed matrices (coordinate grids, DFT matrices) cost nothing at gradient
time.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "tensor",
    "constant",
    "as_tensor",
    "add",
    "subtract",
    "multiply",
    "divide",
    "negate",
    "matmul",
    "dot",
    "sum",
    "mean",
    "square",
    "sqrt",
    "exp",
    "log",
    "tanh",
    "gelu",
    "silu",
    "layer_norm",
    "clip",
    "reshape",
    "transpose",
    "concat",
    "take",
    "broadcast_to",
    "backward",
    "grad_check",
    "gelu_np",
    "silu_np",
    "layer_norm_np",
]

# coefficients of the tanh-form GELU; fixed so checkpoints stay portable
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class ShapeError(ValueError):
    """Operand shapes do not conform for the named operation."""

    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {' and '.join(str(tuple(s)) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class Tensor:
    """Graph node: a float64 array plus the bookkeeping to differentiate it."""

    __slots__ = ("value", "grad", "op", "parents", "const", "_backward")

    def __init__(self, value, op="leaf", parents=(), const=False, backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.op = op
        self.parents = parents
        self.const = const
        self._backward = backward_fn

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return negate(self)

    def __getitem__(self, idx):
        return take(self, idx)


def tensor(value):
    """Differentiable leaf (a parameter or input we may want gradients for)."""
    return Tensor(value)


def constant(value):
    """Leaf excluded from differentiation."""
    return Tensor(value, const=True)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, const=True)


def _unbroadcast(g, shape):
    # reduce a gradient back to the pre-broadcast operand shape
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _node(op, value, parents, backward_fn):
    const = all(p.const for p in parents)
    return Tensor(value, op=op, parents=parents, const=const,
                  backward_fn=None if const else backward_fn)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    out = _node("add", a.value + b.value, (a, b), None)

    def bwd(g):
        if not a.const:
            a.accumulate(_unbroadcast(g, a.shape))
        if not b.const:
            b.accumulate(_unbroadcast(g, b.shape))

    out._backward = bwd
    return out


def subtract(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("subtract", a, b)
    out = _node("subtract", a.value - b.value, (a, b), None)

    def bwd(g):
        if not a.const:
            a.accumulate(_unbroadcast(g, a.shape))
        if not b.const:
            b.accumulate(_unbroadcast(-g, b.shape))

    out._backward = bwd
    return out


def multiply(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("multiply", a, b)
    out = _node("multiply", a.value * b.value, (a, b), None)

    def bwd(g):
        if not a.const:
            a.accumulate(_unbroadcast(g * b.value, a.shape))
        if not b.const:
            b.accumulate(_unbroadcast(g * a.value, b.shape))

    out._backward = bwd
    return out


def divide(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("divide", a, b)
    out = _node("divide", a.value / b.value, (a, b), None)

    def bwd(g):
        if not a.const:
            a.accumulate(_unbroadcast(g / b.value, a.shape))
        if not b.const:
            b.accumulate(_unbroadcast(-g * a.value / (b.value * b.value), b.shape))

    out._backward = bwd
    return out


def negate(a):
    a = as_tensor(a)
    out = _node("negate", -a.value, (a,), None)

    def bwd(g):
        if not a.const:
            a.accumulate(-g)

    out._backward = bwd
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = _node("matmul", a.value @ b.value, (a, b), None)

    def bwd(g):
        if not a.const:
            a.accumulate(g @ b.value.T)
        if not b.const:
            b.accumulate(a.value.T @ g)

    out._backward = bwd
    return out


def dot(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape[0] != b.shape[0]:
        raise ShapeError("dot", a.shape, b.shape)
    out = _node("dot", np.dot(a.value, b.value), (a, b), None)

    def bwd(g):
        if not a.const:
            a.accumulate(g * b.value)
        if not b.const:
            b.accumulate(g * a.value)

    out._backward = bwd
    return out


def _restore_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - numpy-style namespace
    x = as_tensor(x)
    out = _node("sum", x.value.sum(axis=axis, keepdims=keepdims), (x,), None)

    def bwd(g):
        if not x.const:
            x.accumulate(_restore_reduced(g, x.shape, axis, keepdims).copy())

    out._backward = bwd
    return out


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = _node("mean", x.value.mean(axis=axis, keepdims=keepdims), (x,), None)
    n = x.size if axis is None else np.prod(
        [x.shape[ax % x.ndim] for ax in ((axis,) if isinstance(axis, int) else axis)])

    def bwd(g):
        if not x.const:
            x.accumulate(_restore_reduced(g, x.shape, axis, keepdims) / n)

    out._backward = bwd
    return out


def square(x):
    x = as_tensor(x)
    out = _node("square", x.value * x.value, (x,), None)

    def bwd(g):
        if not x.const:
            x.accumulate(2.0 * x.value * g)

    out._backward = bwd
    return out


def sqrt(x):
    x = as_tensor(x)
    val = np.sqrt(x.value)
    out = _node("sqrt", val, (x,), None)

    def bwd(g):
        if not x.const:
            x.accumulate(g / (2.0 * val))

    out._backward = bwd
    return out


def exp(x):
    x = as_tensor(x)
    val = np.exp(x.value)
    out = _node("exp", val, (x,), None)

    def bwd(g):
        if not x.const:
            x.accumulate(g * val)

    out._backward = bwd
    return out


def log(x):
    x = as_tensor(x)
    out = _node("log", np.log(x.value), (x,), None)

    def bwd(g):
        if not x.const:
            x.accumulate(g / x.value)

    out._backward = bwd
    return out


def tanh(x):
    x = as_tensor(x)
    val = np.tanh(x.value)
    out = _node("tanh", val, (x,), None)

    def bwd(g):
        if not x.const:
            x.accumulate(g * (1.0 - val * val))

    out._backward = bwd
    return out


def gelu_np(x):
    """tanh-form GELU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    inner = _GELU_C * (x + _GELU_A * x**3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu(x):
    x = as_tensor(x)
    v = x.value
    inner = _GELU_C * (v + _GELU_A * v**3)
    t = np.tanh(inner)
    out = _node("gelu", 0.5 * v * (1.0 + t), (x,), None)

    def bwd(g):
        if not x.const:
            d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * v * v)
            x.accumulate(g * d)

    out._backward = bwd
    return out


def silu_np(x):
    # reciprocal-multiply matches the graph op bit for bit
    return x * (1.0 / (1.0 + np.exp(-x)))


def silu(x):
    x = as_tensor(x)
    v = x.value
    sig = 1.0 / (1.0 + np.exp(-v))
    out = _node("silu", v * sig, (x,), None)

    def bwd(g):
        if not x.const:
            x.accumulate(g * sig * (1.0 + v * (1.0 - sig)))

    out._backward = bwd
    return out


def layer_norm_np(x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    # reciprocal-multiply, not divide: keeps eval bit-identical to the graph op
    return (x - mu) * (1.0 / np.sqrt(var + eps))


def layer_norm(x, eps=1e-5):
    """Normalize over the last axis to zero mean, unit variance."""
    x = as_tensor(x)
    v = x.value
    mu = v.mean(axis=-1, keepdims=True)
    var = v.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (v - mu) * inv
    out = _node("layer_norm", y, (x,), None)

    def bwd(g):
        if not x.const:
            gm = g.mean(axis=-1, keepdims=True)
            gym = (g * y).mean(axis=-1, keepdims=True)
            x.accumulate(inv * (g - gm - y * gym))

    out._backward = bwd
    return out


def clip(x, lo, hi):
    """Clamp values to [lo, hi]; gradient passes through the interior only."""
    x = as_tensor(x)
    v = x.value
    out = _node("clip", np.clip(v, lo, hi), (x,), None)

    def bwd(g):
        if not x.const:
            x.accumulate(g * ((v >= lo) & (v <= hi)))

    out._backward = bwd
    return out


def reshape(x, shape):
    x = as_tensor(x)
    out = _node("reshape", x.value.reshape(shape), (x,), None)

    def bwd(g):
        if not x.const:
            x.accumulate(g.reshape(x.shape))

    out._backward = bwd
    return out


def transpose(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("transpose", x.shape)
    out = _node("transpose", x.value.T.copy(), (x,), None)

    def bwd(g):
        if not x.const:
            x.accumulate(g.T)

    out._backward = bwd
    return out


def concat(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    out_val = np.concatenate([p.value for p in parts], axis=axis)
    out = _node("concat", out_val, tuple(parts), None)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        pieces = np.split(g, splits, axis=axis)
        for p, gp in zip(parts, pieces):
            if not p.const:
                p.accumulate(gp)

    out._backward = bwd
    return out


def take(x, idx):
    """Basic slicing / integer indexing with scatter-add backward."""
    x = as_tensor(x)
    out = _node("take", x.value[idx].copy(), (x,), None)

    def bwd(g):
        if not x.const:
            gx = np.zeros_like(x.value)
            np.add.at(gx, idx, g)
            x.accumulate(gx)

    out._backward = bwd
    return out


def broadcast_to(x, shape):
    x = as_tensor(x)
    try:
        val = np.broadcast_to(x.value, shape).copy()
    except ValueError:
        raise ShapeError("broadcast_to", x.shape, shape) from None
    out = _node("broadcast_to", val, (x,), None)

    def bwd(g):
        if not x.const:
            x.accumulate(_unbroadcast(g, x.shape))

    out._backward = bwd
    return out


def _toposort(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited or node.const:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def backward(root):
    """Accumulate d(root)/d(leaf) into every reachable non-const leaf.

    ``root`` must be scalar (size 1).
    """
    if root.size != 1:
        raise ShapeError("backward(scalar root expected)", root.shape)
    if root.const:
        return
    order = _toposort(root)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad_check(fn, params, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` rebuilds and returns a scalar loss Tensor from ``params`` (a list
    of leaf Tensors) on every call; any internal randomness must be frozen.
    """
    for p in params:
        p.zero_grad()
    loss = fn()
    backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.value)
                for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.value.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn().value)
            flat[i] = orig - h
            f_minus = float(fn().value)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(ga.ravel()[i] - fd) / (abs(fd) + 1e-12)
            if err > worst:
                worst = err
    return worst
