"""Dense tensors with reverse-mode automatic differentiation.

Provides exactly the operations a small vision transformer needs:
matrix products, softmax, layer norm, GELU, elementwise arithmetic,
shape surgery (reshape / transpose / concat / slicing) and a
cross-entropy loss.  Values are row-major numpy arrays, float64 by
default.  Differentiable ops append to a per-thread tape (`Graph`);
`backward` walks the tape once, in reverse, and then marks it consumed,
so a second backward without a fresh forward pass is an error.

Broadcasting is supported for elementwise ops and for the leading
(batch) dimensions of `matmul`; gradients are summed back down to each
operand's shape.
"""

import math
import threading

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Graph",
    "ShapeError",
    "GraphError",
    "no_grad",
    "add",
    "mul",
    "scale",
    "matmul",
    "reshape",
    "transpose",
    "concat",
    "broadcast_to",
    "tensor_sum",
    "mean",
    "softmax",
    "layer_norm",
    "gelu",
    "cross_entropy",
    "backward",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class GraphError(RuntimeError):
    """Backward was called on a missing, empty or already-consumed graph."""


class Graph:
    """Tape of differentiable ops recorded during forward passes.

    Ops are appended in execution order, so the tape is already
    topologically sorted: every op's inputs were produced (or existed as
    leaves) before the op itself.  `backward` visits each record exactly
    once, in reverse order, and marks the tape consumed.  Tensors created
    on a consumed tape keep their values but their history is gone; used
    as inputs to later ops they behave like leaves.
    """

    def __init__(self):
        self.ops = []
        self.consumed = False

    def __len__(self):
        return len(self.ops)


class _OpRecord:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


_state = threading.local()


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


def _active_graph():
    g = getattr(_state, "graph", None)
    if g is None or g.consumed:
        g = Graph()
        _state.graph = g
    return g


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """N-dimensional float array tracked for reverse-mode differentiation.

    `data` is a C-contiguous numpy array; `grad`, once populated by
    `backward`, always matches its shape.  Arithmetic operators build the
    graph: ``a @ b``, ``a + b``, ``a * 2.0``, ``t[idx]``, ``t.sum()`` …
    """

    __slots__ = ("data", "grad", "requires_grad", "graph")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float64
        # asarray keeps 0-d shape, unlike ascontiguousarray
        self.data = np.asarray(arr, dtype=dtype, order="C")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.graph = None

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

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take_slice(self, idx)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data, inputs, vjp):
    """Wrap `data` and record the op if any input participates in a graph."""
    out = Tensor(data)
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        g = _active_graph()
        out.graph = g
        g.ops.append(_OpRecord(out, tuple(inputs), vjp))
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of a numpy broadcast)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_axis(axis, ndim):
    if not isinstance(axis, (int, np.integer)) or not -ndim <= axis < ndim:
        raise ShapeError(f"invalid axis {axis!r} for a {ndim}-d tensor")
    return axis % ndim


# -- elementwise arithmetic ---------------------------------------------

def add(a, b):
    a = _as_tensor(a, np.float64)
    b = _as_tensor(b, a.dtype)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from None

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), vjp)


def mul(a, b):
    a = _as_tensor(a, np.float64)
    b = _as_tensor(b, a.dtype)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from None
    a_data, b_data = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * b_data, a.shape), _unbroadcast(g * a_data, b.shape)

    return _result(a_data * b_data, (a, b), vjp)


def scale(t, s):
    s = float(s)

    def vjp(g):
        return (g * s,)

    return _result(t.data * s, (t,), vjp)


# -- linear algebra ------------------------------------------------------

def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dims incompatible: {a.shape} x {b.shape}") from None
    a_data, b_data = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b_data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a_data, -1, -2) @ g, b.shape)
        return ga, gb

    return _result(a_data @ b_data, (a, b), vjp)


# -- shape surgery -------------------------------------------------------

def reshape(t, shape):
    try:
        data = t.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {t.shape} to {shape}") from None
    in_shape = t.shape

    def vjp(g):
        return (g.reshape(in_shape),)

    return _result(np.ascontiguousarray(data), (t,), vjp)


def transpose(t, axes=None):
    if axes is None:
        axes = tuple(reversed(range(t.ndim)))
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(t.ndim)):
        raise ShapeError(f"invalid axes {axes} for a {t.ndim}-d tensor")
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inverse),)

    return _result(np.ascontiguousarray(t.data.transpose(axes)), (t,), vjp)


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    axis = _check_axis(axis, tensors[0].ndim)
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim:
            raise ShapeError(f"concat rank mismatch: {tensors[0].shape} vs {t.shape}")
        for d in range(t.ndim):
            if d != axis and t.shape[d] != tensors[0].shape[d]:
                raise ShapeError(f"concat shape mismatch on axis {d}: "
                                 f"{tensors[0].shape} vs {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def take_slice(t, idx):
    """Basic indexing (ints / slices / tuples of them) as a differentiable op."""
    data = t.data[idx]
    in_shape = t.shape

    def vjp(g):
        full = np.zeros(in_shape, dtype=g.dtype)
        full[idx] += g
        return (full,)

    return _result(np.ascontiguousarray(data), (t,), vjp)


def broadcast_to(t, shape):
    try:
        data = np.broadcast_to(t.data, shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {t.shape} to {shape}") from None
    in_shape = t.shape

    def vjp(g):
        return (_unbroadcast(g, in_shape),)

    return _result(np.ascontiguousarray(data), (t,), vjp)


# -- reductions ----------------------------------------------------------

def _reduce_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, (int, np.integer)):
        return (_check_axis(axis, ndim),)
    return tuple(_check_axis(a, ndim) for a in axis)


def tensor_sum(t, axis=None, keepdims=False):
    axes = _reduce_axes(axis, t.ndim)
    in_shape = t.shape

    def vjp(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, tuple(axes))
        return (np.broadcast_to(g, in_shape).copy(),)

    return _result(t.data.sum(axis=axes, keepdims=keepdims), (t,), vjp)


def mean(t, axis=None, keepdims=False):
    axes = _reduce_axes(axis, t.ndim)
    in_shape = t.shape
    if axes is None:
        count = t.size
    else:
        count = 1
        for a in axes:
            count *= in_shape[a]

    def vjp(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, tuple(axes))
        return (np.broadcast_to(g / count, in_shape).copy(),)

    return _result(t.data.mean(axis=axes, keepdims=keepdims), (t,), vjp)


# -- nonlinearities -------------------------------------------------------

def softmax(t, axis=-1):
    axis = _check_axis(axis, t.ndim)
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _result(out, (t,), vjp)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    dim = x.shape[-1]
    if gain.shape != (dim,) or bias.shape != (dim,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({dim},), "
                         f"got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))
    gain_data = gain.data

    def vjp(g):
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain_data
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _result(out, (x, gain, bias), vjp)


def gelu(t):
    """Exact GELU: x * Phi(x) with Phi the standard normal CDF (erf form)."""
    x = t.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI

    def vjp(g):
        return (g * (cdf + x * pdf),)

    return _result(x * cdf, (t,), vjp)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Accepts a single row (1-d logits, scalar label) or a batch
    (2-d logits, 1-d labels).  Stable via max-subtracted log-sum-exp.
    """
    squeeze = logits.ndim == 1
    data = logits.data[None, :] if squeeze else logits.data
    if data.ndim != 2:
        raise ShapeError(f"cross_entropy expects 1-d or 2-d logits, got {logits.shape}")
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, n_classes = data.shape
    if lab.shape != (n,):
        raise ShapeError(f"labels shape {lab.shape} does not match batch of {n}")
    if lab.min() < 0 or lab.max() >= n_classes:
        raise ValueError(f"label out of range [0, {n_classes}): {lab.min()}..{lab.max()}")
    m = data.max(axis=1, keepdims=True)
    z = data - m
    lse = np.log(np.exp(z).sum(axis=1))
    losses = lse - z[np.arange(n), lab]
    in_shape = logits.shape

    def vjp(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), lab] -= 1.0
        p *= float(g) / n
        return (p.reshape(in_shape),)

    return _result(np.asarray(losses.mean()), (logits,), vjp)


# -- backward -------------------------------------------------------------

def backward(loss):
    """Populate `grad` on every participating requires_grad tensor.

    `loss` must be a single-element tensor produced by recorded ops.  The
    tape is consumed: calling backward twice without a fresh forward pass
    raises `GraphError`.
    """
    g = loss.graph
    if g is None or not g.ops:
        raise GraphError("tensor has no recorded graph; run a forward pass first")
    if g.consumed:
        raise GraphError("graph already consumed by backward; rerun the forward pass")
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    g.consumed = True
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(g.ops):
        out_grad = rec.out.grad
        if out_grad is None:
            continue
        grads = rec.vjp(out_grad)
        for t, gr in zip(rec.inputs, grads):
            if gr is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += gr
