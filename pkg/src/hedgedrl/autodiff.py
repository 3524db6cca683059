"""Minimal tape-based reverse-mode automatic differentiation over numpy arrays.

Every op records a :class:`Node` on the tape of its inputs. ``Tape.backward``
replays the tape in reverse creation order, which is a valid reverse
topological order because inputs always precede their consumers.

A leading batch axis is accepted by every op so a whole episode of daily
observations can be pushed through the policy in one pass.
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DomainError, NumericError, ShapeError, ConfigError

_ids = itertools.count()

# cap * sigmoid(x) must stay strictly below cap in float64
_SIGMOID_CLIP = 30.0


class Node:
    __slots__ = ("id", "op", "inputs", "value", "_grad", "tape", "name",
                 "requires_grad", "_backward")

    def __init__(self, tape, op, inputs, value, backward=None, name=None,
                 requires_grad=False):
        self.id = next(_ids)
        self.tape = tape
        self.op = op
        self.inputs = tuple(inputs)
        self.value = value
        self._grad = None
        self.name = name
        self.requires_grad = requires_grad
        self._backward = backward

    @property
    def grad(self):
        # allocated on first use; most constants never receive a gradient
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = g

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node<{self.op}{label} shape={self.value.shape}>"

    # operator sugar; plain numbers and arrays become constants
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

    def __getitem__(self, key):
        return getitem(self, key)


class Tape:
    """Append-only record of nodes. Single-threaded; one tape per training step."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._backward_done = False

    def _record(self, op, inputs, value, backward=None, name=None):
        value = np.asarray(value, dtype=np.float64)
        needs = backward is not None and any(n.requires_grad for n in inputs)
        node = Node(self, op, inputs, value, backward if needs else None,
                    name=name, requires_grad=needs)
        self.nodes.append(node)
        return node

    def param(self, value, name=None) -> Node:
        node = Node(self, "param", (), np.array(value, dtype=np.float64),
                    name=name, requires_grad=True)
        self.nodes.append(node)
        return node

    def const(self, value, name=None) -> Node:
        node = Node(self, "const", (), np.asarray(value, dtype=np.float64),
                    name=name)
        self.nodes.append(node)
        return node

    def zero_grad(self):
        for node in self.nodes:
            node.grad = None
        self._backward_done = False

    def backward(self, loss: Node) -> dict:
        """Accumulate d(loss)/d(node) into every node's ``grad``.

        Returns ``{name: grad}`` for named parameter nodes.
        """
        if loss.tape is not self:
            raise ContractError("loss node belongs to a different tape")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
        if self._backward_done:
            raise ContractError("backward already ran on this tape; call zero_grad() first")
        self._backward_done = True
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node._backward is None or not node.requires_grad:
                continue
            if node._grad is None:
                continue
            parts = node._backward(node._grad)
            for inp, g in zip(node.inputs, parts):
                if g is None or not inp.requires_grad:
                    continue
                if g.shape != inp.value.shape:
                    raise ContractError(f"{node.op}: gradient shape {g.shape} != {inp.value.shape}")
                inp.grad = g if inp._grad is None else inp._grad + g
        return {n.name: n.grad for n in self.nodes if n.op == "param" and n.name}


def _tape_of(*items) -> Tape:
    for it in items:
        if isinstance(it, Node):
            return it.tape
    raise ContractError("at least one operand must be a Node")


def _as_node(x, tape: Tape) -> Node:
    if isinstance(x, Node):
        if x.tape is not tape:
            raise ContractError("operands live on different tapes")
        return x
    return tape.const(x)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    ndim_extra = g.ndim - len(shape)
    if ndim_extra > 0:
        g = g.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _as_node(a, tape), _as_node(b, tape)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return tape._record("add", (a, b), a.value + b.value,
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _as_node(a, tape), _as_node(b, tape)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return tape._record("sub", (a, b), a.value - b.value,
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _as_node(a, tape), _as_node(b, tape)
    _broadcast_shape(a, b, "mul")
    av, bv = a.value, b.value
    return tape._record("mul", (a, b), av * bv,
                        lambda g: (_unbroadcast(g * bv, av.shape),
                                   _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _as_node(a, tape), _as_node(b, tape)
    _broadcast_shape(a, b, "div")
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise NumericError("div: zero denominator")
    out = av / bv
    return tape._record("div", (a, b), out,
                        lambda g: (_unbroadcast(g / bv, av.shape),
                                   _unbroadcast(-g * out / bv, bv.shape)))


def neg(a: Node) -> Node:
    return a.tape._record("neg", (a,), -a.value, lambda g: (-g,))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return a.tape._record("scale", (a,), c * a.value, lambda g: (c * g,))


def relu(a: Node) -> Node:
    mask = a.value > 0
    return a.tape._record("relu", (a,), np.where(mask, a.value, 0.0),
                          lambda g: (g * mask,))


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return a.tape._record("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def abs_(a: Node) -> Node:
    sign = np.sign(a.value)
    return a.tape._record("abs", (a,), np.abs(a.value), lambda g: (g * sign,))


def log(a: Node) -> Node:
    if np.any(a.value <= 0):
        raise NumericError("log: non-positive input")
    v = a.value
    return a.tape._record("log", (a,), np.log(v), lambda g: (g / v,))


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return a.tape._record("exp", (a,), out, lambda g: (g * out,))


def sqrt(a: Node) -> Node:
    if np.any(a.value < 0):
        raise NumericError("sqrt: negative input")
    out = np.sqrt(a.value)
    safe = np.where(out > 0, out, np.inf)
    return a.tape._record("sqrt", (a,), out, lambda g: (0.5 * g / safe,))


def elementwise(op_kind: str, a, b=None) -> Node:
    """Dispatch by name: add, sub, mul, div, relu, tanh, neg, scale, abs, log, exp, sqrt.

    For ``scale`` the second argument is the (float) factor.
    """
    binary = {"add": add, "sub": sub, "mul": mul, "div": div}
    unary = {"relu": relu, "tanh": tanh, "neg": neg, "abs": abs_, "log": log, "exp": exp, "sqrt": sqrt}
    if op_kind in binary:
        if b is None:
            raise ContractError(f"{op_kind} needs two operands")
        return binary[op_kind](a, b)
    if op_kind in unary:
        return unary[op_kind](a)
    if op_kind == "scale":
        return scale(a, b)
    raise ContractError(f"unknown elementwise op {op_kind!r}")


# ---------------------------------------------------------------------------
# layers


def dense(x: Node, w: Node, b: Node) -> Node:
    """Affine map ``x @ w + b`` over the last axis of ``x``."""
    if w.value.ndim != 2 or b.value.shape != (w.shape[1],):
        raise ShapeError(f"dense: weights {w.shape} / bias {b.shape} inconsistent")
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    xv, wv = x.value, w.value
    n, m = wv.shape

    def backward(g):
        gx = g @ wv.T
        gw = xv.reshape(-1, n).T @ g.reshape(-1, m)
        gb = g.reshape(-1, m).sum(axis=0)
        return gx, gw, gb

    return x.tape._record("dense", (x, w, b), xv @ wv + b.value, backward)


def conv_rowwise(x: Node, kernels: Node, bias: Node) -> Node:
    """Valid 1-D convolution applied independently to every row of a plane.

    ``x`` is (rows, cols) or (batch, rows, cols); ``kernels`` is
    (n_filters, 1, k); output is (n_filters, rows, cols-k+1) with the batch
    axis prepended when present. Rows never mix.
    """
    kv = kernels.value
    if kv.ndim != 3 or kv.shape[1] != 1:
        raise ShapeError(f"conv_rowwise: kernels must be (filters, 1, k), got {kv.shape}")
    n_f, _, k = kv.shape
    if bias.shape != (n_f,):
        raise ShapeError(f"conv_rowwise: bias {bias.shape} != ({n_f},)")
    batched = x.value.ndim == 3
    if x.value.ndim not in (2, 3):
        raise ShapeError(f"conv_rowwise: input must be 2-D or 3-D, got {x.shape}")
    xv = x.value if batched else x.value[None]
    cols = xv.shape[-1]
    if k > cols:
        raise ShapeError(f"conv_rowwise: kernel width {k} exceeds {cols} columns")
    windows = sliding_window_view(xv, k, axis=-1)  # (B, R, J, k)
    flat = windows.reshape(-1, k)
    k2 = kv[:, 0, :]
    b_, r_, j_ = windows.shape[:3]
    # matmul rather than einsum: it goes through BLAS
    out = (flat @ k2.T).reshape(b_, r_, j_, n_f).transpose(0, 3, 1, 2)
    out = out + bias.value[None, :, None, None]

    def backward(g):
        g4 = g if batched else g[None]
        gflat = g4.transpose(0, 2, 3, 1).reshape(-1, n_f)   # rows align with ``flat``
        gk = (gflat.T @ flat)[:, None, :]
        gb = gflat.sum(axis=0)
        if not x.requires_grad:
            return None, gk, gb
        gw = (gflat @ k2).reshape(b_, r_, j_, k)
        gx = np.zeros_like(xv)
        for u in range(k):
            gx[:, :, u:u + j_] += gw[..., u]
        return (gx if batched else gx[0]), gk, gb

    return x.tape._record("conv_rowwise", (x, kernels, bias),
                          out if batched else out[0], backward)


def softmax(x: Node) -> Node:
    """Softmax over the last axis, stabilised by max subtraction."""
    if not np.all(np.isfinite(x.value)):
        raise NumericError("softmax: non-finite input")
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return x.tape._record("softmax", (x,), y, backward)


def scaled_sigmoid(x: Node, cap: float) -> Node:
    """``cap * sigmoid(x)``; output strictly inside (0, cap)."""
    if not cap > 0:
        raise ConfigError(f"scaled_sigmoid: cap must be > 0, got {cap}")
    xc = np.clip(x.value, -_SIGMOID_CLIP, _SIGMOID_CLIP)
    inside = np.abs(x.value) < _SIGMOID_CLIP
    s = 0.5 * (1.0 + np.tanh(0.5 * xc))
    return x.tape._record("scaled_sigmoid", (x,), cap * s,
                          lambda g: (g * cap * s * (1.0 - s) * inside,))


# ---------------------------------------------------------------------------
# reductions


def reduce(kind: str, x: Node, axis: int | None = None) -> Node:
    """Full (``axis=None``) or single-axis reduction: sum, mean, std_dev, min, max.

    ``std_dev`` is the population (1/n) standard deviation.
    """
    v = x.value
    if v.size == 0:
        raise DomainError(f"{kind}: empty input")
    n = v.size if axis is None else v.shape[axis]
    shape = v.shape

    def expand(g):
        return g if axis is None else np.expand_dims(g, axis)

    if kind == "sum":
        return x.tape._record("sum", (x,), v.sum(axis=axis),
                              lambda g: (np.broadcast_to(expand(g), shape).copy(),))
    if kind == "mean":
        return x.tape._record("mean", (x,), v.mean(axis=axis),
                              lambda g: (np.broadcast_to(expand(g) / n, shape).copy(),))
    if kind == "std_dev":
        if n < 2:
            raise DomainError("std_dev: needs at least 2 values")
        centred = v - v.mean(axis=axis, keepdims=True)
        sd = np.sqrt((centred ** 2).mean(axis=axis))

        def backward(g):
            safe = np.where(sd > 0, sd, np.inf)
            return (expand(g / safe) * centred / n,)

        return x.tape._record("std_dev", (x,), sd, backward)
    if kind in ("min", "max"):
        pick = np.argmin if kind == "min" else np.argmax
        if axis is None:
            idx = np.unravel_index(pick(v), shape)

            def backward(g):
                gx = np.zeros(shape)
                gx[idx] = g
                return (gx,)

            return x.tape._record(kind, (x,), v[idx], backward)
        arg = np.expand_dims(pick(v, axis=axis), axis)

        def backward(g):
            gx = np.zeros(shape)
            np.put_along_axis(gx, arg, expand(g), axis=axis)
            return (gx,)

        return x.tape._record(kind, (x,), np.take_along_axis(v, arg, axis).squeeze(axis),
                              backward)
    raise ContractError(f"unknown reduction {kind!r}")


def sum_(x: Node, axis=None) -> Node:
    return reduce("sum", x, axis)


def mean(x: Node, axis=None) -> Node:
    return reduce("mean", x, axis)


def std_dev(x: Node, axis=None) -> Node:
    return reduce("std_dev", x, axis)


# ---------------------------------------------------------------------------
# structural


def reshape(x: Node, shape) -> Node:
    old = x.shape
    return x.tape._record("reshape", (x,), x.value.reshape(shape),
                          lambda g: (g.reshape(old),))


def getitem(x: Node, key) -> Node:
    shape = x.shape
    basic = all(isinstance(k, (slice, int, type(None), type(Ellipsis)))
                for k in (key if isinstance(key, tuple) else (key,)))

    def backward(g):
        gx = np.zeros(shape)
        if basic:
            gx[key] += g
        else:
            np.add.at(gx, key, g)
        return (gx,)

    return x.tape._record("getitem", (x,), x.value[key], backward)


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    tape = _tape_of(*nodes)
    nodes = [_as_node(n, tape) for n in nodes]
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]
    return tape._record("concat", nodes, out,
                        lambda g: tuple(np.split(g, bounds, axis=axis)))


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(fn: Callable[[dict], Node], point, eps: float = 1e-5,
               coords: int | None = None, rng=None) -> float:
    """Worst relative error between tape gradients and central differences.

    ``fn`` receives ``{name: param_node}`` built on a fresh tape and returns a
    scalar node. ``point`` is an array or a ``{name: array}`` mapping. With
    ``coords`` set, only that many randomly chosen coordinates are probed.
    """
    if not 0 < eps <= 1e-2:
        raise ConfigError(f"grad_check: eps must lie in (0, 1e-2], got {eps}")
    single = not isinstance(point, dict)
    point = {"x": point} if single else point
    point = {k: np.array(v, dtype=np.float64) for k, v in point.items()}

    def evaluate(values):
        tape = Tape()
        params = {k: tape.param(v, name=k) for k, v in values.items()}
        out = fn(params["x"] if single else params)
        if not np.all(np.isfinite(out.value)):
            raise NumericError("grad_check: non-finite function value")
        return tape, out

    tape, out = evaluate(point)
    analytic = tape.backward(out)

    flat = [(k, i) for k, v in point.items() for i in range(v.size)]
    if coords is not None and coords < len(flat):
        rng = rng if rng is not None else np.random.default_rng(0)
        flat = [flat[j] for j in rng.choice(len(flat), size=coords, replace=False)]

    worst = 0.0
    for k, i in flat:
        shifted = {kk: vv.copy() for kk, vv in point.items()}
        base = point[k].flat[i]
        shifted[k].flat[i] = base + eps
        f_plus = float(evaluate(shifted)[1].value)
        shifted[k].flat[i] = base - eps
        f_minus = float(evaluate(shifted)[1].value)
        numeric = (f_plus - f_minus) / (2 * eps)
        a = float(analytic[k].flat[i])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
