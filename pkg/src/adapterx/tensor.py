"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op builds its output eagerly and, when any input requires a
gradient, records a closure mapping the output gradient to input
gradients.  ``Tensor.backward`` walks the recorded graph in reverse
topological order.
"""

import contextlib
import itertools

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block; results never require a gradient."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.node_id = next(_ids)
        self._parents = ()
        self._backward = None

    # ------------------------------------------------------------ basics
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
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.shape[0]

    # ------------------------------------------------------------ operators
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    # ------------------------------------------------------------ backward
    def backward(self):
        """Accumulate d(self)/d(node) into ``.grad`` of every reachable node.

        Gradients of repeated calls add up; call ``zero_grad`` in between
        to start afresh.
        """
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` by reversing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- binary ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data
    return _result(
        out,
        (a, b),
        lambda g: (unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)),
    )


def scale(a, c):
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    """Matrix product with numpy batching rules; 1-D operands are promoted."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1,) + a.shape), b), b.shape[:-2] + b.shape[-1:])
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, b.shape + (1,))), a.shape[:-1])
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else unbroadcast(ga, a.shape),
            None if gb is None else unbroadcast(gb, b.shape),
        )

    return _result(out, (a, b), backward)


# ----------------------------------------------------------------- unary ops


def relu(a):
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def gelu(a):
    """Exact (erf) GELU."""
    k = kernels.active()
    x = np.ascontiguousarray(a.data)
    return _result(k.gelu_fwd(x), (a,), lambda g: (k.gelu_bwd(x, np.ascontiguousarray(g)),))


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a):
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}
_UNARY = {"relu": relu, "gelu": gelu, "exp": exp, "log": log, "sqrt": sqrt}


def elementwise(kind, a, b=None):
    """Dispatch an elementwise op by name; ``scale`` takes a float ``b``."""
    if kind in _BINARY:
        if b is None:
            raise ContractError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind == "scale":
        return scale(as_tensor(a), b)
    if kind in _UNARY:
        return _UNARY[kind](as_tensor(a))
    raise ContractError(f"unknown elementwise op {kind!r}")


def activation(name):
    try:
        return {"gelu": gelu, "relu": relu}[name]
    except KeyError:
        raise ContractError(f"unknown activation {name!r}") from None


# ---------------------------------------------------------- normalisations


def _rows(x):
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def softmax(x, axis=-1):
    x = as_tensor(x)
    if x.ndim == 0:
        raise DimensionError("softmax: scalar input")
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for shape {x.shape}")
    axis %= x.ndim
    k = kernels.active()
    moved = np.moveaxis(x.data, axis, -1)
    y = k.softmax_fwd(_rows(moved)).reshape(moved.shape)

    def backward(g):
        gm = np.moveaxis(g, axis, -1)
        gx = k.softmax_bwd(_rows(y), _rows(gm)).reshape(moved.shape)
        return (np.moveaxis(gx, -1, axis),)

    return _result(np.moveaxis(y, -1, axis), (x,), backward)


def log_softmax(x):
    """Log-softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _result(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalise the last axis to zero mean and unit variance, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must match last axis {d} of {x.shape}"
        )
    if eps <= 0:
        raise ContractError("layer_norm: eps must be positive")
    k = kernels.active()
    y, xhat, rstd = k.layer_norm_fwd(_rows(x.data), gamma.data, beta.data, float(eps))

    def backward(g):
        dx, dgamma, dbeta = k.layer_norm_bwd(_rows(g), xhat, rstd, gamma.data)
        return dx.reshape(x.shape), dgamma, dbeta

    return _result(y.reshape(x.shape), (x, gamma, beta), backward)


# ------------------------------------------------------------ shape ops


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(range(x.ndim))[:-2] + (x.ndim - 1, x.ndim - 2) if x.ndim >= 2 else (0,)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def broadcast_to(x, shape):
    x = as_tensor(x)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise DimensionError(f"broadcast_to: {x.shape} cannot broadcast to {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (unbroadcast(g, x.shape),))


def _is_fancy(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(x, idx):
    out = x.data[idx]
    fancy = _is_fancy(idx)

    def backward(g):
        gx = np.zeros_like(x.data)
        if fancy:
            np.add.at(gx, idx, g)
        else:
            gx[idx] = g
        return (gx,)

    return _result(np.array(out, copy=True) if fancy else out, (x,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _result(out, tensors, backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# ------------------------------------------------------------ reductions


def tsum(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(tsum(x, axis, keepdims), 1.0 / n)


def l2_normalize(x, axis=-1, detach_norm=False):
    """``x / ||x||`` along ``axis``; optionally treat the norm as a constant."""
    sq = tsum(x * x, axis=axis, keepdims=True)
    norm = sqrt(sq)
    if detach_norm:
        norm = norm.detach()
    return x / norm


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    lp = log_softmax(logits)
    picked = getitem(lp, (np.arange(len(labels)), labels))
    return scale(tsum(picked), -1.0 / len(labels))
