"""Small reverse-mode automatic differentiation over numpy float64 arrays.

Every primitive returns a new :class:`Tensor` holding its forward value, its
parents and a pullback that maps the output cotangent to one cotangent per
parent. Broadcasting follows numpy; pullbacks sum cotangents back down to the
parent's shape.
"""

from __future__ import annotations

import numpy as np
from scipy import special


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "pullback", "op", "name")
    # make ndarray <op> Tensor dispatch to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, value, requires_grad=False, parents=(), pullback=None, op="leaf", name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.pullback = pullback
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, other):
        return pow(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value, name=None) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(value, parents, pullback, op):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, parents, pullback, op)
    return Tensor(value, op=op)


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# binary elementwise ---------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.value / b.value

    def pullback(g):
        ga = g / b.value
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), pullback, "div")


def pow(a, b):
    """``a ** b``; the exponent may itself be a tensor.

    The exponent's gradient ``a**b * ln(a)`` is taken as zero where ``a <= 0``.
    """
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "pow")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.value ** b.value

    def pullback(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            ga = np.where(a.value != 0, g * b.value * out / np.where(a.value != 0, a.value, 1.0),
                          np.where(b.value == 1, g, 0.0)) if a.requires_grad else 0.0
            gb = np.where(a.value > 0, g * out * np.log(np.where(a.value > 0, a.value, 1.0)), 0.0) if b.requires_grad else 0.0
        return (_unbroadcast(np.broadcast_to(ga, out.shape), a.shape) if a.requires_grad else None,
                _unbroadcast(np.broadcast_to(gb, out.shape), b.shape) if b.requires_grad else None)

    return _make(out, (a, b), pullback, "pow")


def minimum(a, c: float):
    """Elementwise ``min(a, c)`` against a constant; the clipped side gets zero gradient."""
    a = as_tensor(a)
    keep = a.value <= c
    return _make(np.where(keep, a.value, c), (a,), lambda g: (g * keep,), "clip_max")


def maximum(a, c: float):
    """Elementwise ``max(a, c)`` against a constant; the clipped side gets zero gradient."""
    a = as_tensor(a)
    keep = a.value >= c
    return _make(np.where(keep, a.value, c), (a,), lambda g: (g * keep,), "clip_min")


def clip(a, lo=None, hi=None):
    if lo is not None:
        a = maximum(a, lo)
    if hi is not None:
        a = minimum(a, hi)
    return a


# unary elementwise ----------------------------------------------------------

def neg(a):
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,), "neg")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def expm1(a):
    a = as_tensor(a)
    out = np.expm1(a.value)
    return _make(out, (a,), lambda g: (g * (out + 1.0),), "expm1")


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def sin(a):
    a = as_tensor(a)
    return _make(np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),), "sin")


def cos(a):
    a = as_tensor(a)
    return _make(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),), "cos")


def tan(a):
    a = as_tensor(a)
    out = np.tan(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 + out * out),), "tan")


def abs(a):
    a = as_tensor(a)
    return _make(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),), "abs")


def sigmoid(a):
    a = as_tensor(a)
    out = special.expit(a.value)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def softplus(a):
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.value)
    return _make(out, (a,), lambda g: (g * special.expit(a.value),), "softplus")


def lgamma(a):
    a = as_tensor(a)
    return _make(special.gammaln(a.value), (a,), lambda g: (g * special.digamma(a.value),), "lgamma")


def softmax(a, axis=-1):
    a = as_tensor(a)
    out = special.softmax(a.value, axis=axis)

    def pullback(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), pullback, "softmax")


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    out = special.log_softmax(a.value, axis=axis)

    def pullback(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), pullback, "log_softmax")


def logsumexp(a, axis=-1, keepdims=False):
    a = as_tensor(a)
    out = special.logsumexp(a.value, axis=axis, keepdims=True)

    def pullback(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * np.exp(a.value - out),)

    return _make(out if keepdims else np.squeeze(out, axis=axis), (a,), pullback, "logsumexp")


def lstm_gates(z, mem_prev):
    """Fused LSTM gate update.

    ``z`` holds the (B, 4d) pre-activations ordered input, forget, candidate,
    output. Returns ``concat([h, mem], axis=1)`` of shape (B, 2d).
    """
    z, mem_prev = as_tensor(z), as_tensor(mem_prev)
    d = mem_prev.shape[-1]
    if z.shape[-1] != 4 * d:
        raise ValueError(f"lstm_gates: shape mismatch {z.shape} vs memory {mem_prev.shape}")
    zv = z.value
    # sigmoid(x) = (1 + tanh(x/2)) / 2, so one tanh call covers all four gates
    half = np.full(4 * d, 0.5)
    half[2 * d:3 * d] = 1.0
    t = np.tanh(zv * half)
    i = 0.5 + 0.5 * t[:, :d]
    f = 0.5 + 0.5 * t[:, d:2 * d]
    g = t[:, 2 * d:3 * d]
    o = 0.5 + 0.5 * t[:, 3 * d:]
    mem = f * mem_prev.value + i * g
    th = np.tanh(mem)
    h = o * th

    def pullback(grad):
        gh, gm = grad[:, :d], grad[:, d:]
        gm = gm + gh * o * (1.0 - th * th)
        dz = np.empty_like(zv)
        dz[:, :d] = gm * g * i * (1.0 - i)
        dz[:, d:2 * d] = gm * mem_prev.value * f * (1.0 - f)
        dz[:, 2 * d:3 * d] = gm * i * (1.0 - g * g)
        dz[:, 3 * d:] = gh * th * o * (1.0 - o)
        return dz, gm * f

    return _make(np.concatenate([h, mem], axis=1), (z, mem_prev), pullback, "lstm_gates")


def stop_gradient(a):
    """Forward identity that contributes no gradient."""
    a = as_tensor(a)
    return Tensor(a.value.copy(), op="stop_gradient")


# linear algebra, reductions, shape ------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    out = a.value @ b.value

    def pullback(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.value) if a.requires_grad else None
            gb = (a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1)) if b.requires_grad else None
            return ga, gb
        ga = g @ np.swapaxes(b.value, -1, -2) if a.requires_grad else None
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.multiply.outer(a.value, g)
            else:
                gb = a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = None
        return ga, gb

    return _make(out, (a, b), pullback, "matmul")


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def pullback(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), pullback, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a, index):
    a = as_tensor(a)

    basic = all(isinstance(i, (slice, int, type(Ellipsis))) for i in (index if isinstance(index, tuple) else (index,)))

    def pullback(g):
        out = np.zeros(a.shape)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make(a.value[index], (a,), pullback, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.value for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    return _make(np.stack([t.value for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.moveaxis(g, axis, 0)), "stack")


# tape and backward ----------------------------------------------------------

class Tape:
    """Nodes reachable from an output, parents always before children."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def record(cls, output: Tensor) -> "Tape":
        order, seen = [], set()
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
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor):
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        cot = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = cot.pop(id(node), None)
            if g is None:
                continue
            if not node.parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, gp in zip(node.parents, node.pullback(g)):
                if gp is None or not p.requires_grad:
                    continue
                key = id(p)
                cot[key] = gp if key not in cot else cot[key] + gp


def backward(loss: Tensor, tape: Tape | None = None):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf needing it."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    (tape or Tape.record(loss)).backward(loss)


def grad(loss: Tensor, params):
    """Gradients of ``loss`` with respect to ``params`` (fresh, not accumulated)."""
    for p in params:
        p.grad = None
    backward(loss)
    return [np.zeros_like(p.value) if p.grad is None else p.grad for p in params]
