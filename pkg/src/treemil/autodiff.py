"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure computing the vector-Jacobian product. ``Tensor.backward`` walks the
graph in reverse topological order. Graphs are single use: once backward has
run, the intermediate nodes drop their closures and a second call raises.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "ShapeError",
    "GraphError",
    "tensor",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "sum",
    "mean",
    "max",
    "softmax",
    "sigmoid",
    "relu",
    "log",
    "clip",
    "conv1d",
    "layer_norm",
    "concatenate",
    "where",
    "AdamState",
    "Adam",
    "adam_step",
]


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class ShapeError(ValueError):
    """Operand shapes are incompatible for an op."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes " + " and ".join(str(s) for s in self.shapes))


class GraphError(RuntimeError):
    pass


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    # make numpy defer to our reflected operators (ndarray * Tensor -> Tensor)
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, _parents=(), _op=""):
        self.data = _as_array(data)
        self.grad = None
        self._parents = tuple(_parents)
        self._op = _op
        self._backward = None
        self._released = False
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in self._parents)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    # graph construction helper
    @staticmethod
    def _make(data, parents, op, backward):
        if not _GRAD_ENABLED:
            return Tensor(data, _op=op)
        out = Tensor(data, _parents=parents, _op=op)
        if out.requires_grad:
            out._backward = backward
        else:
            out._parents = ()
        return out

    def backward(self):
        if self.data.size != 1 or self.data.ndim > 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._released:
            raise GraphError("graph already consumed by a previous backward(); run forward again")
        if not self.requires_grad:
            raise GraphError("loss does not depend on any tensor requiring grad")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg
            node._backward = None
            node._parents = ()
            node._released = True

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis):
        return max(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), "add", backward)


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._make(a.data - b.data, (a, b), "sub", backward)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._make(a.data * b.data, (a, b), "mul", backward)


def div(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return Tensor._make(out, (a, b), "div", backward)


def sigmoid(x):
    x = _lift(x)
    # tanh form is overflow-free and gives exactly 0.5 at 0
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor._make(out, (x,), "sigmoid", backward)


def relu(x):
    x = _lift(x)
    pos = x.data > 0

    def backward(g):
        return (g * pos,)

    return Tensor._make(np.where(pos, x.data, 0.0), (x,), "relu", backward)


def log(x):
    x = _lift(x)

    def backward(g):
        return (g / x.data,)

    return Tensor._make(np.log(x.data), (x,), "log", backward)


def clip(x, lo, hi):
    x = _lift(x)
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        return (g * inside,)

    return Tensor._make(np.clip(x.data, lo, hi), (x,), "clip", backward)


def where(cond, a, b):
    """Select ``a`` where ``cond`` holds, else ``b`` (masked select / fill)."""
    cond = np.asarray(cond, dtype=bool)
    a, b = _lift(a), _lift(b)
    try:
        shape = np.broadcast_shapes(cond.shape, a.shape, b.shape)
    except ValueError:
        raise ShapeError("where", cond.shape, a.shape, b.shape) from None

    def backward(g):
        return (
            _unbroadcast(np.where(cond, g, 0.0), a.shape),
            _unbroadcast(np.where(cond, 0.0, g), b.shape),
        )

    out = np.broadcast_to(np.where(cond, a.data, b.data), shape)
    return Tensor._make(out, (a, b), "where", backward)


# ------------------------------------------------------------------ linear


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            # fold batch dims into one matmul instead of materialising per-batch grads
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._make(a.data @ b.data, (a, b), "matmul", backward)


def conv1d(x, weight, bias=None):
    """1-d convolution, stride 1, same-length output via symmetric zero padding.

    ``x`` is ``(..., C_in, L)``, ``weight`` is ``(C_out, C_in, k)`` with odd
    ``k``, ``bias`` is ``(C_out,)``. Returns ``(..., C_out, L)``.
    """
    x, weight = _lift(x), _lift(weight)
    if weight.ndim != 3 or x.ndim < 2 or x.shape[-2] != weight.shape[1] or weight.shape[2] % 2 == 0:
        raise ShapeError("conv1d", x.shape, weight.shape)
    c_out, c_in, k = weight.shape
    lead, length = x.shape[:-2], x.shape[-1]
    half = k // 2
    xp = np.pad(x.data.reshape(-1, c_in, length), [(0, 0), (0, 0), (half, half)])
    # cols[b, c, j, t] = xp[b, c, t + j]
    cols = np.stack([xp[..., j : j + length] for j in range(k)], axis=2)
    out = np.einsum("ocj,bcjt->bot", weight.data, cols, optimize=True)
    parents = [x, weight]
    if bias is not None:
        bias = _lift(bias)
        if bias.shape != (c_out,):
            raise ShapeError("conv1d", weight.shape, bias.shape)
        out = out + bias.data[:, None]
        parents.append(bias)

    def backward(g):
        g = g.reshape(-1, c_out, length)
        gw = np.einsum("bot,bcjt->ocj", g, cols, optimize=True)
        gcols = np.einsum("ocj,bot->bcjt", weight.data, g, optimize=True)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[..., j : j + length] += gcols[:, :, j, :]
        grads = [gxp[..., half : half + length].reshape(x.shape), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    out = out.reshape(*lead, c_out, length)
    return Tensor._make(out, tuple(parents), "conv1d", backward)


# -------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims=False):
    x = _lift(x)
    axes = _norm_axis(axis, x.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._make(x.data.sum(axis=axes, keepdims=keepdims), (x,), "sum", backward)


def mean(x, axis=None, keepdims=False):
    x = _lift(x)
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return Tensor._make(x.data.mean(axis=axes, keepdims=keepdims), (x,), "mean", backward)


def max(x, axis):
    """Elementwise maximum over one axis (a set of same-shape members).

    The gradient goes to a single argmax per output coordinate; ties go to
    the lowest index along ``axis``.
    """
    x = _lift(x)
    axis = axis % x.ndim
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return Tensor._make(out, (x,), "max", backward)


def softmax(x, axis=-1):
    x = _lift(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), "softmax", backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise over the last axis, then scale and shift."""
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gamma.shape, beta.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._make(xhat * gamma.data + beta.data, (x, gamma, beta), "layer_norm", backward)


# ----------------------------------------------------------------- shaping


def reshape(x, shape):
    x = _lift(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor._make(out, (x,), "reshape", backward)


def transpose(x, axes=None):
    x = _lift(x)
    out = np.transpose(x.data, axes)
    inverse = None if axes is None else np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inverse),)

    return Tensor._make(out, (x,), "transpose", backward)


def take(x, index):
    """Basic or advanced indexing (slice / gather); scatter-add on the way back."""
    x = _lift(x)
    out = x.data[index]
    basic = _is_basic_index(index)
    axis_gather = None if basic else _single_axis_gather(index)

    def backward(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[index] += g
        elif axis_gather is not None:
            _scatter_add_axis(gx, g, *axis_gather)
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return Tensor._make(np.array(out), (x,), "slice", backward)


def _single_axis_gather(index):
    """(axis, int array) when ``index`` is full slices plus one integer array."""
    items = index if isinstance(index, tuple) else (index,)
    arrays = [i for i, item in enumerate(items) if isinstance(item, np.ndarray)]
    if len(arrays) != 1 or arrays[0] is None:
        return None
    pos = arrays[0]
    idx = items[pos]
    if idx.dtype.kind not in "iu":
        return None
    for i, item in enumerate(items):
        if i != pos and item != slice(None):
            return None
    return pos, idx


def _scatter_add_axis(gx, g, axis, idx):
    # sort the gathered positions once, then sum equal-index runs with reduceat
    flat = idx.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_idx = flat[order]
    starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
    shape = g.shape[:axis] + (flat.size,) + g.shape[axis + idx.ndim :]
    gs = np.take(g.reshape(shape), order, axis=axis)
    sums = np.add.reduceat(gs, starts, axis=axis)
    target = [slice(None)] * gx.ndim
    target[axis] = sorted_idx[starts]
    gx[tuple(target)] += sums


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def concatenate(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, t.shape)) if i != ax):
            raise ShapeError("concatenate", ref, t.shape)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), "concatenate", backward)


# --------------------------------------------------------------------- adam


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


def adam_step(params, state):
    """One bias-corrected Adam update, in place, on a ``name -> Tensor`` dict."""
    for name, p in params.items():
        if p.grad is None:
            raise GraphError(f"parameter {name!r} has no gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, state=None):
        self.params = params
        self.state = state if state is not None else AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self):
        adam_step(self.params, self.state)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
