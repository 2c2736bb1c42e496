"""Reverse-mode differentiation over the layer primitives.

A :class:`Tape` records every operation applied to its :class:`Var` objects.
The differentiable ops below accept plain arrays too; when none of their
inputs is a ``Var`` they just compute, so the same model code serves both
inference and training.

    tape = Tape()
    w = tape.var(w0)
    loss = ad.sum(ad.square(ad.conv_freq(x, w, b, 2)))
    tape.backward(loss)
    w.grad
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from . import primitives as P


class Var:
    """An array tracked by a tape."""

    __slots__ = ("value", "tape", "grad", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, value: np.ndarray, tape: "Tape"):
        self.value = value
        self.tape = tape
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, dtype={self.dtype})"

    def __getitem__(self, idx):
        return getitem(self, idx)

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

    def __neg__(self):
        return mul(self, -1.0)


@dataclass
class Node:
    name: str
    inputs: tuple[Any, ...]
    outputs: tuple[Var, ...]
    backward: Callable[[list], Sequence]
    forward: Callable[..., tuple]


class Tape:
    """Ordered record of operations; single writer."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def var(self, value) -> Var:
        return Var(np.asarray(value), self)

    def backward(self, loss: Var, seed=None) -> None:
        """Propagate d(loss) back to every var on the tape, filling ``.grad``."""
        if not self.nodes:
            raise ValueError("tape is empty")
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        if seed is None:
            seed = np.ones_like(loss.value)
        seed = np.asarray(seed, dtype=loss.value.dtype)
        if seed.size != 1:
            raise ValueError("seed gradient must be scalar")
        grads: dict[int, np.ndarray] = {id(loss): seed.reshape(loss.value.shape)}
        for node in reversed(self.nodes):
            outs = [grads.get(id(o)) for o in node.outputs]
            if all(g is None for g in outs):
                continue
            in_grads = node.backward(outs)
            for inp, g in zip(node.inputs, in_grads):
                if g is None or not isinstance(inp, Var):
                    continue
                key = id(inp)
                grads[key] = g if key not in grads else grads[key] + g
                inp.grad = grads[key]
        loss.grad = grads[id(loss)]

    def replay(self) -> bool:
        """Re-run every node on its recorded input values; True if outputs reproduce exactly."""
        for node in self.nodes:
            vals = [x.value if isinstance(x, Var) else x for x in node.inputs]
            outs = node.forward(*vals)
            for new, old in zip(outs, node.outputs):
                if not np.array_equal(np.asarray(new), old.value):
                    return False
        return True


def value(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(inputs) -> Tape | None:
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("inputs recorded on different tapes")
    return tape


def _apply(name, forward, backward, inputs, n_out=1):
    """Run ``forward(*values) -> (outputs, ctx)``; record it if any input is a Var.

    ``backward(ctx, grads)`` gets one gradient per output (None if unused;
    a bare gradient for single-output ops) and returns one per input.
    """
    vals = [value(x) for x in inputs]
    outs, ctx = forward(*vals)
    tape = _tape_of(inputs)
    if tape is None:
        return outs
    out_tuple = outs if n_out > 1 else (outs,)
    out_vars = tuple(Var(np.asarray(o), tape) for o in out_tuple)

    def node_backward(gs):
        if n_out == 1:
            g = gs[0]
            return backward(ctx, g)
        return backward(ctx, gs)

    def node_forward(*v):
        o = forward(*v)[0]
        return o if n_out > 1 else (o,)

    tape.nodes.append(Node(name, tuple(inputs), out_vars, node_backward, node_forward))
    return out_vars if n_out > 1 else out_vars[0]


# ------------------------------------------------------------ layer ops

def conv_freq(x, w, b, stride: int):
    return _apply("conv_freq", lambda x, w, b: P.conv_freq_forward(x, w, b, stride),
                  P.conv_freq_backward, (x, w, b))


def deconv_freq(x, w, b, stride: int):
    return _apply("deconv_freq", lambda x, w, b: P.deconv_freq_forward(x, w, b, stride),
                  P.deconv_freq_backward, (x, w, b))


def prelu(x, a):
    return _apply("prelu", P.prelu_forward, P.prelu_backward, (x, a))


def linear(x, w, b):
    return _apply("linear", P.linear_forward, P.linear_backward, (x, w, b))


def lstm(x, wi, wh, bi, bh, h0, c0):
    """Returns (y, h_T, c_T)."""
    def backward(ctx, gs):
        return P.lstm_backward(ctx, gs)
    return _apply("lstm", P.lstm_forward, backward, (x, wi, wh, bi, bh, h0, c0), n_out=3)


def _cgln(name, fwd, bwd, x, gamma, beta, stats, count, eps):
    if stats is None:
        stats = np.zeros(2)

    def forward(x, g, b, s):
        (y, s1, _), ctx = fwd(x, g, b, s, count, eps)
        return (y, s1), ctx

    def backward(ctx, gs):
        return bwd(ctx, gs)

    y, s1 = _apply(name, forward, backward, (x, gamma, beta, stats), n_out=2)
    n = value(x).shape[0] if value(x).ndim == 2 else value(x).shape[1]
    per_frame = value(x).size // max(n, 1)
    return y, s1, count + per_frame * n


def cgln_2d(x, gamma, beta, stats=None, count=0, eps=P.EPS):
    """Returns (y, stats_T, count_T)."""
    return _cgln("cgln_2d", P.cgln_2d_forward, P.cgln_2d_backward, x, gamma, beta, stats, count, eps)


def cgln_3d(x, gamma, beta, stats=None, count=0, eps=P.EPS):
    """Returns (y, stats_T, count_T)."""
    return _cgln("cgln_3d", P.cgln_3d_forward, P.cgln_3d_backward, x, gamma, beta, stats, count, eps)


# -------------------------------------------------------- structural ops

def reshape(x, shape):
    src = value(x).shape
    return _apply("reshape", lambda v: (v.reshape(shape), None),
                  lambda _, g: (g.reshape(src),), (x,))


def transpose(x, axes):
    inv = np.argsort(axes)
    return _apply("transpose", lambda v: (v.transpose(axes), None),
                  lambda _, g: (g.transpose(inv),), (x,))


def pad_last(x, n: int):
    """Append ``n`` zeros along the last axis."""
    if n == 0:
        return x
    width = [(0, 0)] * (value(x).ndim - 1) + [(0, n)]
    return _apply("pad", lambda v: (np.pad(v, width), None),
                  lambda _, g: (g[..., :g.shape[-1] - n],), (x,))


def pad_both(x, n: int):
    width = [(0, 0)] * (value(x).ndim - 1) + [(n, n)]
    return _apply("pad", lambda v: (np.pad(v, width), None),
                  lambda _, g: (g[..., n:g.shape[-1] - n],), (x,))


def getitem(x, idx):
    shape = value(x).shape

    def backward(_, g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] += g
        return (full,)
    return _apply("getitem", lambda v: (v[idx], None), backward, (x,))


def concat(xs, axis: int):
    xs = list(xs)
    sizes = [value(x).shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _apply("concat", lambda *v: (np.concatenate(v, axis=axis), None),
                  lambda _, g: tuple(np.split(g, cuts, axis=axis)), tuple(xs))


def stack(xs, axis: int = 0):
    xs = list(xs)
    return _apply("stack", lambda *v: (np.stack(v, axis=axis), None),
                  lambda _, g: tuple(np.moveaxis(g, axis, 0)), tuple(xs))


# ---------------------------------------------------------- arithmetic

def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b):
    sa, sb = np.shape(value(a)), np.shape(value(b))
    return _apply("add", lambda a, b: (a + b, None),
                  lambda _, g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), (a, b))


def sub(a, b):
    sa, sb = np.shape(value(a)), np.shape(value(b))
    return _apply("sub", lambda a, b: (a - b, None),
                  lambda _, g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), (a, b))


def mul(a, b):
    sa, sb = np.shape(value(a)), np.shape(value(b))
    return _apply("mul", lambda a, b: (a * b, (a, b)),
                  lambda c, g: (_unbroadcast(g * c[1], sa), _unbroadcast(g * c[0], sb)), (a, b))


def square(x):
    return _apply("square", lambda v: (v * v, v), lambda v, g: (2.0 * v * g,), (x,))


def sqrt(x):
    def forward(v):
        r = np.sqrt(v)
        return r, r
    return _apply("sqrt", forward, lambda r, g: (0.5 * g / r,), (x,))


def absolute(x):
    return _apply("abs", lambda v: (np.abs(v), np.sign(v)), lambda s, g: (g * s,), (x,))


def sum(x):  # noqa: A001 - mirrors numpy naming
    shape = value(x).shape
    return _apply("sum", lambda v: (np.sum(v), None),
                  lambda _, g: (np.broadcast_to(g, shape).copy(),), (x,))


def mean(x):
    shape = value(x).shape
    n = int(np.prod(shape))
    return _apply("mean", lambda v: (np.mean(v), None),
                  lambda _, g: (np.broadcast_to(g / n, shape).copy(),), (x,))


def custom(name, forward, backward, *inputs, n_out=1):
    """Record an externally defined op (``forward(*values) -> (out, ctx)``)."""
    return _apply(name, forward, backward, inputs, n_out=n_out)
