"""Minimal reverse-mode differentiation over float64 numpy arrays.

A ``Tape`` records every primitive op in execution order (which is already a
topological order); ``backward`` walks the record once in reverse and
accumulates gradients by the chain rule.  Quaternion structure enters through
a single primitive, ``qblock``, which expands the four weight channels of a
quaternion matrix into the equivalent real block matrix, so the Hamilton
product's backward pass is the plain matmul backward applied through that
bilinear form.

A tape is confined to one logical thread.  Distinct tapes may run backward
concurrently over shared read-only parameters: leaf gradients accumulate in a
per-call sink (thread-local), so the maps returned by ``backward`` never mix.
The ``.grad`` attribute on shared leaves is a single-thread debugging
convenience only.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ContractError, DimensionError

_tls = threading.local()


class Node:
    """One value in the computation record."""

    __slots__ = ("value", "grad", "parents", "bwd", "op")

    def __init__(self, value, parents=(), bwd=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.bwd = bwd
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"


class Param(Node):
    """A named, trainable leaf tensor (weight or bias)."""

    __slots__ = ("name", "trainable")

    def __init__(self, name, value, trainable=True):
        super().__init__(value, op="param")
        self.name = name
        self.trainable = trainable


class Tape:
    """Ordered record of executed primitive ops plus the leaves they touch."""

    def __init__(self):
        self.records = []
        self._leaves = {}

    def _emit(self, value, parents, bwd, op):
        node = Node(value, parents, bwd, op)
        self.records.append(node)
        for p in parents:
            if p.bwd is None:  # leaf: param, constant or input
                self._leaves[id(p)] = p
        return node

    @property
    def leaves(self):
        return list(self._leaves.values())


def _acc(node, g):
    if node.bwd is None:
        # leaves may be shared across tapes, so their gradients go to the
        # sink of whichever backward call is running on this thread
        sink = _tls.leaf_sink
        key = id(node)
        if key in sink:
            sink[key] = sink[key] + g
        else:
            sink[key] = g
        return
    if node.grad is None:
        node.grad = g
    else:
        node.grad = node.grad + g


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _as_node(x):
    return x if isinstance(x, Node) else Node(x, op="const")


def constant(value):
    """Wrap a raw array as a non-trainable leaf."""
    return Node(value, op="const")


# -- arithmetic -------------------------------------------------------------


def add(tape, a, b):
    a, b = _as_node(a), _as_node(b)

    def bwd(g):
        _acc(a, _unbroadcast(g, a.value.shape))
        _acc(b, _unbroadcast(g, b.value.shape))

    return tape._emit(a.value + b.value, (a, b), bwd, "add")


def sub(tape, a, b):
    a, b = _as_node(a), _as_node(b)

    def bwd(g):
        _acc(a, _unbroadcast(g, a.value.shape))
        _acc(b, _unbroadcast(-g, b.value.shape))

    return tape._emit(a.value - b.value, (a, b), bwd, "sub")


def mul(tape, a, b):
    a, b = _as_node(a), _as_node(b)
    av, bv = a.value, b.value

    def bwd(g):
        _acc(a, _unbroadcast(g * bv, av.shape))
        _acc(b, _unbroadcast(g * av, bv.shape))

    return tape._emit(av * bv, (a, b), bwd, "mul")


def div(tape, a, b):
    a, b = _as_node(a), _as_node(b)
    av, bv = a.value, b.value

    def bwd(g):
        _acc(a, _unbroadcast(g / bv, av.shape))
        _acc(b, _unbroadcast(-g * av / (bv * bv), bv.shape))

    return tape._emit(av / bv, (a, b), bwd, "div")


def neg(tape, a):
    def bwd(g):
        _acc(a, -g)

    return tape._emit(-a.value, (a,), bwd, "neg")


def scale(tape, a, c):
    c = float(c)

    def bwd(g):
        _acc(a, g * c)

    return tape._emit(a.value * c, (a,), bwd, "scale")


def matmul(tape, a, b):
    """``a (..., k) @ b (k, n)``; leading axes of ``a`` are batch dims."""
    a, b = _as_node(a), _as_node(b)
    av, bv = a.value, b.value
    if bv.ndim != 2 or av.shape[-1] != bv.shape[0]:
        raise DimensionError(
            f"matmul: operand shapes {av.shape} and {bv.shape} do not align"
        )
    k, n = bv.shape

    def bwd(g):
        g2 = g.reshape(-1, n)
        _acc(a, (g2 @ bv.T).reshape(av.shape))
        _acc(b, av.reshape(-1, k).T @ g2)

    return tape._emit(av @ bv, (a, b), bwd, "matmul")


# -- nonlinearities ----------------------------------------------------------


def relu(tape, a):
    mask = a.value > 0

    def bwd(g):
        _acc(a, g * mask)

    return tape._emit(a.value * mask, (a,), bwd, "relu")


def sigmoid(tape, a):
    x = a.value
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        _acc(a, g * out * (1.0 - out))

    return tape._emit(out, (a,), bwd, "sigmoid")


def tanh(tape, a):
    out = np.tanh(a.value)

    def bwd(g):
        _acc(a, g * (1.0 - out * out))

    return tape._emit(out, (a,), bwd, "tanh")


def exp(tape, a):
    out = np.exp(a.value)

    def bwd(g):
        _acc(a, g * out)

    return tape._emit(out, (a,), bwd, "exp")


def log(tape, a):
    av = a.value

    def bwd(g):
        _acc(a, g / av)

    return tape._emit(np.log(av), (a,), bwd, "log")


def sqrt(tape, a):
    out = np.sqrt(a.value)

    def bwd(g):
        _acc(a, g / (2.0 * out))

    return tape._emit(out, (a,), bwd, "sqrt")


def clip(tape, a, lo, hi):
    """Clamp with pass-through gradient strictly inside [lo, hi]."""
    av = a.value
    mask = (av >= lo) & (av <= hi)

    def bwd(g):
        _acc(a, g * mask)

    return tape._emit(np.clip(av, lo, hi), (a,), bwd, "clip")


def softmax(tape, a, axis=-1):
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _acc(a, out * (g - dot))

    return tape._emit(out, (a,), bwd, "softmax")


# -- reductions & shape ops ---------------------------------------------------


def sum_axis(tape, a, axis=None, keepdims=False):
    av = a.value

    def bwd(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, av.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _acc(a, np.broadcast_to(gg, av.shape).copy())

    return tape._emit(av.sum(axis=axis, keepdims=keepdims), (a,), bwd, "sum")


def mean_axis(tape, a, axis=None, keepdims=False):
    av = a.value
    count = av.size if axis is None else av.shape[axis]

    def bwd(g):
        if axis is None:
            _acc(a, np.broadcast_to(g / count, av.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _acc(a, np.broadcast_to(gg / count, av.shape).copy())

    return tape._emit(av.mean(axis=axis, keepdims=keepdims), (a,), bwd, "mean")


def reshape(tape, a, shape):
    av = a.value

    def bwd(g):
        _acc(a, g.reshape(av.shape))

    return tape._emit(av.reshape(shape), (a,), bwd, "reshape")


def concat(tape, parts, axis=-1):
    parts = [_as_node(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            _acc(p, piece)

    return tape._emit(
        np.concatenate([p.value for p in parts], axis=axis), tuple(parts), bwd, "concat"
    )


def pad_axis(tape, a, axis, before, after):
    """Zero-pad along one axis."""
    av = a.value
    widths = [(0, 0)] * av.ndim
    widths[axis] = (before, after)
    sl = [slice(None)] * av.ndim
    sl[axis] = slice(before, before + av.shape[axis])
    sl = tuple(sl)

    def bwd(g):
        _acc(a, g[sl])

    return tape._emit(np.pad(av, widths), (a,), bwd, "pad")


def slice_axis(tape, a, axis, start, stop):
    av = a.value
    sl = [slice(None)] * av.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def bwd(g):
        full = np.zeros_like(av)
        full[sl] = g
        _acc(a, full)

    return tape._emit(av[sl].copy(), (a,), bwd, "slice")


# -- gather/scatter primitives -------------------------------------------------


def pool_select(tape, x, idx, n_units):
    """Select one position per unit: x (B, L, 4n), idx (B, ..., n) -> (B, ..., 4n).

    The planar feature axis holds four component planes of ``n_units`` each;
    all four components of a selected quaternion come from the same position.
    Extra middle axes of ``idx`` (e.g. a 2-D pooling grid) carry through.
    """
    xv = x.value
    b, _, p = xv.shape
    out_shape = idx.shape[:-1] + (p,)
    idx2 = idx.reshape(b, -1, n_units)
    feat = (np.arange(4)[:, None] * n_units + np.arange(n_units)[None, :])  # (4, n)
    bb = np.arange(b)[:, None, None, None]
    ll = idx2[:, :, None, :]
    out = xv[bb, ll, feat[None, None]].reshape(out_shape)

    def bwd(g):
        full = np.zeros_like(xv)
        g4 = g.reshape(b, -1, 4, n_units)
        np.add.at(full, (bb, ll, feat[None, None]), g4)
        _acc(x, full)

    return tape._emit(out, (x,), bwd, "pool_select")


def select_rows(tape, a, col_idx):
    """Per-row column pick: a (B, C), col_idx (B,) -> (B,)."""
    av = a.value
    rows = np.arange(av.shape[0])

    def bwd(g):
        full = np.zeros_like(av)
        np.add.at(full, (rows, col_idx), g)
        _acc(a, full)

    return tape._emit(av[rows, col_idx].copy(), (a,), bwd, "select_rows")


def qblock(tape, w):
    """Real block expansion of a quaternion matrix.

    ``w`` has shape (4, n, m): the four weight channels of an n -> m
    quaternion map.  Returns the (4n, 4m) real matrix K such that
    ``x_planar @ K`` equals the left Hamilton product W (x) x for planar
    (r|i|j|k) layouts.
    """
    wr, wi, wj, wk = w.value
    n, m = wr.shape
    k = np.empty((4, n, 4, m))
    k[0, :, 0], k[0, :, 1], k[0, :, 2], k[0, :, 3] = wr, wi, wj, wk
    k[1, :, 0], k[1, :, 1], k[1, :, 2], k[1, :, 3] = -wi, wr, wk, -wj
    k[2, :, 0], k[2, :, 1], k[2, :, 2], k[2, :, 3] = -wj, -wk, wr, wi
    k[3, :, 0], k[3, :, 1], k[3, :, 2], k[3, :, 3] = -wk, wj, -wi, wr

    def bwd(g):
        d = g.reshape(4, n, 4, m)
        dw = np.stack(
            [
                d[0, :, 0] + d[1, :, 1] + d[2, :, 2] + d[3, :, 3],
                d[0, :, 1] - d[1, :, 0] + d[2, :, 3] - d[3, :, 2],
                d[0, :, 2] - d[1, :, 3] - d[2, :, 0] + d[3, :, 1],
                d[0, :, 3] + d[1, :, 2] - d[2, :, 1] - d[3, :, 0],
            ]
        )
        _acc(w, dw)

    return tape._emit(k.reshape(4 * n, 4 * m), (w,), bwd, "qblock")


# -- driver -------------------------------------------------------------------


def backward(tape, loss, params=None):
    """Reverse pass from a scalar loss; returns {name: gradient} for params.

    Every trainable Param touched by the tape appears in the map; params
    passed explicitly but unreached by the loss get zero gradients.  The
    arrays are freshly owned by the caller.
    """
    if loss.value.ndim != 0:
        raise ContractError(
            f"backward needs a scalar loss, got shape {loss.value.shape}"
        )
    for node in tape.records:
        node.grad = None
    _tls.leaf_sink = sink = {}
    try:
        loss.grad = np.ones(())
        for node in reversed(tape.records):
            if node.grad is not None and node.bwd is not None:
                node.bwd(node.grad)
    finally:
        _tls.leaf_sink = None

    grads = {}
    for leaf in tape.leaves:
        g = sink.get(id(leaf))
        if g is None:
            g = np.zeros_like(leaf.value)
        leaf.grad = g
        if isinstance(leaf, Param) and leaf.trainable:
            grads[leaf.name] = g
    if params is not None:
        for p in params:
            if p.trainable and p.name not in grads:
                p.grad = np.zeros_like(p.value)
                grads[p.name] = p.grad
    return grads


def finite_diff_check(params, run, eps=1e-5):
    """Compare analytic gradients against central finite differences.

    ``run()`` must rebuild the forward pass deterministically (identical
    dropout masks on every call) and return ``(loss_node, tape)``.  The step
    for a weight scalar t is ``eps * max(1, |t|)``.  Returns the max relative
    error ``|a - n| / max(1, |a|, |n|)`` across every trainable scalar.
    """
    loss, tape = run()
    analytic = {
        name: g.copy() for name, g in backward(tape, loss, params=params).items()
    }
    worst = 0.0
    for p in params:
        if not p.trainable:
            continue
        flat = p.value.reshape(-1)
        gflat = analytic[p.name].reshape(-1)
        for i in range(flat.size):
            theta = flat[i]
            h = eps * max(1.0, abs(theta))
            flat[i] = theta + h
            lp = float(run()[0].value)
            flat[i] = theta - h
            lm = float(run()[0].value)
            flat[i] = theta
            numeric = (lp - lm) / (2.0 * h)
            err = abs(numeric - gflat[i]) / max(1.0, abs(numeric), abs(gflat[i]))
            worst = max(worst, err)
    return worst
