"""Reverse-mode automatic differentiation over dense numpy arrays.

A small tape-free engine: each operation returns a new :class:`Tensor`
carrying its parent tensors and a closure that routes the output gradient
back to them. :func:`backward` walks the graph in reverse topological order;
gradients accumulate additively when a tensor feeds several consumers, so
shared subexpressions and weight tying come out right without special cases.

Precision model: tensors are float32 or float64, nothing else. float32 is the
working precision for training; gradient checks build the same graphs in
float64. Binary ops refuse mixed dtypes (silent upcasts hide exactly the bugs
the float64 mode exists to catch); python scalars coerce to the tensor's
dtype.

Subgraphs that cannot influence any gradient (e.g. a frozen target network's
forward pass) record no parents and no closures, so they cost nothing at
backward time. NaNs propagate silently here; divergence detection belongs to
the optimizer and training loop.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from . import kernels

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes incompatible; message names both shapes."""


class Tensor:
    """A numpy array plus the graph bookkeeping needed for backprop.

    Treat ``data`` as frozen once the tensor participates in an op; closures
    capture it by reference. ``grad`` is lazily allocated by the first
    accumulation and matches ``data``'s shape and dtype.
    """

    def __init__(self, data, requires_grad=False, name=None):
        data = np.asarray(data)
        if data.dtype not in _FLOAT_DTYPES:
            raise TypeError(
                f"tensor dtype must be float32 or float64, got {data.dtype}"
            )
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() needs a size-1 tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # operator sugar; all routed through the module-level ops
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def parameter(data, name):
    """Trainable leaf; the optimizer keys its state by the (unique) name."""
    if not name:
        raise ValueError("parameters need a non-empty name")
    return Tensor(data, requires_grad=True, name=name)


def constant(data, dtype):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=False)


def _accum(t, g, own=False):
    """Route gradient g into t.grad; returns True when g itself was taken.

    own=True means the caller guarantees no OTHER parent will be handed an
    alias of g, so the first write can keep it without copying. A node's grad
    buffer is dead once its _backward has run, so a bwd closure may donate the
    incoming g (or a view of it) to at most one parent under that flag;
    anything shared between two parents must be copied by all but one.
    """
    if t.grad is None:
        if own and g.shape == t.data.shape and g.dtype == t.data.dtype and g.flags.writeable:
            t.grad = g
            return True
        t.grad = np.array(np.broadcast_to(g, t.data.shape), dtype=t.data.dtype)
        return False
    t.grad += g
    return False


def _make(data, parents, bwd):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = bwd
    return out


def _coerce_pair(a, b, opname):
    """Promote python/numpy scalars and raw arrays to the Tensor operand's dtype."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        if a.data.dtype != b.data.dtype:
            raise TypeError(
                f"{opname}: mixed dtypes {a.data.dtype} and {b.data.dtype}; cast explicitly"
            )
        return a, b
    if isinstance(a, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor):
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    raise TypeError(f"{opname}: needs at least one Tensor operand")


def _unbroadcast(g, shape):
    """Sum g down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast(fn, a, b, opname):
    try:
        return fn(a.data, b.data)
    except ValueError as e:
        raise ShapeError(
            f"{opname}: operand shapes {a.shape} and {b.shape} do not broadcast"
        ) from e


def add(a, b):
    a, b = _coerce_pair(a, b, "add")
    out_data = _broadcast(np.add, a, b, "add")

    def bwd(g):
        g_taken = False
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            g_taken = _accum(a, ga, own=True) and ga is g
        if b.requires_grad:
            gb = _unbroadcast(g, b.data.shape)
            _accum(b, gb, own=not (g_taken and gb is g))

    return _make(out_data, (a, b), bwd)


def sub(a, b):
    a, b = _coerce_pair(a, b, "sub")
    out_data = _broadcast(np.subtract, a, b, "sub")

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape), own=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape), own=True)

    return _make(out_data, (a, b), bwd)


def mul(a, b):
    a, b = _coerce_pair(a, b, "mul")
    out_data = _broadcast(np.multiply, a, b, "mul")

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape), own=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape), own=True)

    return _make(out_data, (a, b), bwd)


def div(a, b):
    a, b = _coerce_pair(a, b, "div")
    out_data = _broadcast(np.divide, a, b, "div")

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.data.shape), own=True)
        if b.requires_grad:
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            _accum(b, gb, own=True)

    return _make(out_data, (a, b), bwd)


def matmul(a, b):
    a, b = _coerce_pair(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >= 2-d, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(
            f"matmul: batch dimensions incompatible: {a.shape} @ {b.shape}"
        ) from e

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, b.data.swapaxes(-1, -2))
            _accum(a, _unbroadcast(ga, a.data.shape), own=True)
        if b.requires_grad:
            gb = np.matmul(a.data.swapaxes(-1, -2), g)
            _accum(b, _unbroadcast(gb, b.data.shape), own=True)

    return _make(out_data, (a, b), bwd)


def exp(x):
    out_data = np.exp(x.data)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * out_data, own=True)

    return _make(out_data, (x,), bwd)


def log(x):
    out_data = np.log(x.data)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g / x.data, own=True)

    return _make(out_data, (x,), bwd)


def sqrt(x):
    # derivative is unbounded at 0; clamp inputs first when that matters
    out_data = np.sqrt(x.data)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * 0.5 / out_data, own=True)

    return _make(out_data, (x,), bwd)


def tanh(x):
    out_data = np.tanh(x.data)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * (1.0 - out_data * out_data), own=True)

    return _make(out_data, (x,), bwd)


def sigmoid(x):
    out_data = expit(x.data)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * out_data * (1.0 - out_data), own=True)

    return _make(out_data, (x,), bwd)


def gelu(x):
    flat = np.ascontiguousarray(x.data.reshape(-1))
    out_data = kernels.gelu_fwd(flat).reshape(x.data.shape)

    def bwd(g):
        if x.requires_grad:
            gflat = np.ascontiguousarray(g.reshape(-1))
            _accum(x, kernels.gelu_bwd(gflat, flat).reshape(x.data.shape), own=True)

    return _make(out_data, (x,), bwd)


def softmax(x):
    """Softmax over the last axis."""
    d = x.data.shape[-1]
    rows = np.ascontiguousarray(x.data.reshape(-1, d))
    y = kernels.softmax_fwd(rows)
    out_data = y.reshape(x.data.shape)

    def bwd(g):
        if x.requires_grad:
            grows = np.ascontiguousarray(g.reshape(-1, d))
            _accum(x, kernels.softmax_bwd(grows, y).reshape(x.data.shape), own=True)

    return _make(out_data, (x,), bwd)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must be ({d},) "
            f"for input {x.shape}"
        )
    rows = np.ascontiguousarray(x.data.reshape(-1, d))
    y, mean, rstd = kernels.layernorm_fwd(rows, gamma.data, beta.data, eps)
    out_data = y.reshape(x.data.shape)

    def bwd(g):
        grows = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgamma, dbeta = kernels.layernorm_bwd(grows, rows, gamma.data, mean, rstd)
        if x.requires_grad:
            _accum(x, dx.reshape(x.data.shape), own=True)
        if gamma.requires_grad:
            _accum(gamma, dgamma, own=True)
        if beta.requires_grad:
            _accum(beta, dbeta, own=True)

    return _make(out_data, (x, gamma, beta), bwd)


def l2_norm(x, axis=-1, keepdims=False, guard=1e-12):
    """Euclidean norm along `axis`; backward divides by max(norm, guard)."""
    sq = np.sum(x.data * x.data, axis=axis, keepdims=True)
    norm_keep = np.sqrt(sq)
    out_data = norm_keep if keepdims else np.squeeze(norm_keep, axis=axis)

    def bwd(g):
        if x.requires_grad:
            gk = g if keepdims else np.expand_dims(g, axis)
            _accum(x, gk * x.data / np.maximum(norm_keep, guard), own=True)

    return _make(out_data, (x,), bwd)


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims=False):
    out_data = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bwd(g):
        if x.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, _axis_tuple(axis, x.data.ndim))
            _accum(x, np.broadcast_to(g, x.data.shape).copy(), own=True)

    return _make(out_data, (x,), bwd)


def mean(x, axis=None, keepdims=False):
    out_data = np.mean(x.data, axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else int(
        np.prod([x.data.shape[a] for a in _axis_tuple(axis, x.data.ndim)])
    )

    def bwd(g):
        if x.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, _axis_tuple(axis, x.data.ndim))
            _accum(x, np.broadcast_to(g / count, x.data.shape).copy(), own=True)

    return _make(out_data, (x,), bwd)


def _extreme(x, axis, keepdims, np_reduce, np_arg):
    """Shared max/min: ties send the whole gradient to the first extremal index."""
    out_data = np_reduce(x.data, axis=axis, keepdims=keepdims)

    def bwd(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        if axis is None:
            idx = np_arg(x.data)  # first flat index on ties
            gx.reshape(-1)[idx] = np.sum(g)
        else:
            ax = axis % x.data.ndim
            idx = np.expand_dims(np_arg(x.data, axis=ax), ax)
            gk = g if keepdims else np.expand_dims(g, ax)
            np.put_along_axis(gx, idx, gk, axis=ax)
        _accum(x, gx, own=True)

    return _make(out_data, (x,), bwd)


def max_(x, axis=None, keepdims=False):
    return _extreme(x, axis, keepdims, np.max, np.argmax)


def min_(x, axis=None, keepdims=False):
    return _extreme(x, axis, keepdims, np.min, np.argmin)


def clamp_min(x, floor):
    """Elementwise max(x, floor) for scalar floor; gradient passes where x >= floor."""
    out_data = np.maximum(x.data, floor)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * (x.data >= floor).astype(x.data.dtype), own=True)

    return _make(out_data, (x,), bwd)


def clamp(x, lo, hi):
    """Clip into [lo, hi]; gradient passes on the closed interval."""
    out_data = np.clip(x.data, lo, hi)

    def bwd(g):
        if x.requires_grad:
            mask = ((x.data >= lo) & (x.data <= hi)).astype(x.data.dtype)
            _accum(x, g * mask, own=True)

    return _make(out_data, (x,), bwd)


def transpose(x, axes=None):
    out_data = np.transpose(x.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def bwd(g):
        if x.requires_grad:
            # transposed view of g; sole parent, so donation is exclusive
            _accum(x, np.transpose(g, inv), own=True)

    return _make(out_data, (x,), bwd)


def reshape(x, shape):
    out_data = x.data.reshape(shape)

    def bwd(g):
        if x.requires_grad:
            _accum(x, np.ascontiguousarray(g).reshape(x.data.shape), own=True)

    return _make(out_data, (x,), bwd)


def _is_basic_index(idx):
    """Basic indexing never selects an element twice, so a plain slice-assign
    accumulates gradients correctly and much faster than np.add.at."""
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(
        isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None
        for i in items
    )


def getitem(x, idx):
    out_data = x.data[idx]
    basic = _is_basic_index(idx)

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            if basic:
                gx[idx] += g
            else:
                np.add.at(gx, idx, g)
            _accum(x, gx, own=True)

    return _make(out_data, (x,), bwd)


def concatenate(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concatenate: empty tensor list")
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise TypeError("concatenate: mixed dtypes; cast explicitly")
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(
            "concatenate: shapes "
            + ", ".join(str(t.shape) for t in tensors)
            + f" incompatible along axis {axis}"
        ) from e
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                # disjoint slice views; each parent owns its own region of g
                _accum(t, g[tuple(sl)], own=True)

    return _make(out_data, tuple(tensors), bwd)


def stop_gradient(x):
    """Same values, detached from the graph; shares the data buffer."""
    return Tensor(x.data)


def backward(loss, params=None):
    """Backprop from a size-1 loss; afterwards every tensor in `params` has a
    grad buffer (zeros when the loss does not reach it)."""
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be size 1, got shape {loss.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def zero_grad(params):
    for p in params:
        p.grad = None
