"""Reverse-mode automatic differentiation over dense float64 arrays.

The engine is deliberately small: a closed set of primitives, each with a
hand-written vector-Jacobian product, and a backward pass that visits nodes in
decreasing creation order.  Every primitive accepts plain arrays as well as
:class:`Node` operands; when no operand is a node the primitive simply returns
the numpy result, so model code written against these primitives doubles as a
fast non-differentiable evaluator.

Example
-------
>>> x = Node(np.array(3.0))
>>> y = x * x
>>> gradients(y, [x])[0]
array(6.)
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg as sla
from scipy import special

__all__ = [
    "Node", "ParamVector", "NonFiniteError", "GraphConsumedError",
    "forward", "backward", "gradients", "jvp_dot", "value_of",
    "add", "sub", "mul", "div", "neg", "power", "square", "sqrt", "matmul",
    "exp", "log", "tanh", "sigmoid", "softplus", "relu", "absolute", "lgamma",
    "x_over_expm1", "sum", "mean", "logsumexp", "log_softmax", "reshape",
    "transpose", "getitem", "concat", "tri_solve", "spd_solve", "spd_logdet",
]

_ids = itertools.count()


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf during forward evaluation."""


class GraphConsumedError(RuntimeError):
    """Backward was requested on a graph that has already been differentiated."""


class Node:
    """A value in the computation graph.

    ``parents`` holds ``(node, vjp)`` pairs where ``vjp`` maps the cotangent of
    this node to the cotangent contribution for that parent.
    """

    __slots__ = ("value", "parents", "id", "op", "consumed", "root")
    __array_ufunc__ = None  # make ndarray <op> Node defer to Node's reflected operators

    def __init__(self, value, parents=(), op="leaf"):
        self.value = np.asarray(value, dtype=float)
        self.parents = parents
        self.id = next(_ids)
        self.op = op
        self.consumed = False
        self.root = None

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

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
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return sum(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def value_of(x):
    """Return the numeric value of a node or array-like."""
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=float)


def _shapes(operands):
    return [np.shape(value_of(o)) for o in operands]


def _make(op, value, operands, vjps):
    """Wrap a primitive result, attaching vjps for the operands that are nodes."""
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(
            f"primitive '{op}' produced a non-finite value "
            f"(operand shapes {_shapes(operands)})")
    parents = tuple((o, f) for o, f in zip(operands, vjps) if isinstance(o, Node))
    if not parents:
        return value
    return Node(value, parents, op)


def _unbroadcast(g, shape):
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# --------------------------------------------------------------------------- #
# elementwise arithmetic

def add(a, b):
    va, vb = value_of(a), value_of(b)
    return _make("add", va + vb, (a, b),
                 (lambda g: _unbroadcast(g, va.shape),
                  lambda g: _unbroadcast(g, vb.shape)))


def sub(a, b):
    va, vb = value_of(a), value_of(b)
    return _make("sub", va - vb, (a, b),
                 (lambda g: _unbroadcast(g, va.shape),
                  lambda g: _unbroadcast(-g, vb.shape)))


def mul(a, b):
    va, vb = value_of(a), value_of(b)
    return _make("mul", va * vb, (a, b),
                 (lambda g: _unbroadcast(g * vb, va.shape),
                  lambda g: _unbroadcast(g * va, vb.shape)))


def div(a, b):
    va, vb = value_of(a), value_of(b)
    out = va / vb
    return _make("div", out, (a, b),
                 (lambda g: _unbroadcast(g / vb, va.shape),
                  lambda g: _unbroadcast(-g * out / vb, vb.shape)))


def neg(a):
    return _make("neg", -value_of(a), (a,), (lambda g: -g,))


def power(a, exponent):
    """``a ** exponent`` for a constant real exponent."""
    if isinstance(exponent, Node):
        raise TypeError("power supports constant exponents only")
    va = value_of(a)
    p = float(exponent)
    return _make("power", va ** p, (a,), (lambda g: g * p * va ** (p - 1.0),))


def square(a):
    va = value_of(a)
    return _make("square", va * va, (a,), (lambda g: 2.0 * g * va,))


def sqrt(a):
    out = np.sqrt(value_of(a))
    return _make("sqrt", out, (a,), (lambda g: 0.5 * g / out,))


def exp(a):
    out = np.exp(value_of(a))
    return _make("exp", out, (a,), (lambda g: g * out,))


def log(a):
    va = value_of(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(va)
    return _make("log", out, (a,), (lambda g: g / va,))


def tanh(a):
    out = np.tanh(value_of(a))
    return _make("tanh", out, (a,), (lambda g: g * (1.0 - out * out),))


def sigmoid(a):
    out = special.expit(value_of(a))
    return _make("sigmoid", out, (a,), (lambda g: g * out * (1.0 - out),))


def softplus(a):
    va = value_of(a)
    return _make("softplus", np.logaddexp(0.0, va), (a,),
                 (lambda g: g * special.expit(va),))


def relu(a):
    va = value_of(a)
    return _make("relu", np.maximum(va, 0.0), (a,), (lambda g: g * (va > 0),))


def absolute(a):
    va = value_of(a)
    return _make("abs", np.abs(va), (a,), (lambda g: g * np.sign(va),))


def lgamma(a):
    va = value_of(a)
    return _make("lgamma", special.gammaln(va), (a,),
                 (lambda g: g * special.digamma(va),))


def x_over_expm1(a):
    """``u / (exp(u) - 1)`` with the removable singularity at 0 filled in."""
    u = value_of(a)
    small = np.abs(u) < 1e-4
    safe = np.where(small, 1.0, u)
    em1 = np.expm1(safe)
    out = np.where(small, 1.0 - u / 2.0 + u * u / 12.0, safe / em1)
    slope = np.where(small, -0.5 + u / 6.0,
                     (em1 - safe * np.exp(safe)) / (em1 * em1))
    return _make("x_over_expm1", out, (a,), (lambda g: g * slope,))


# --------------------------------------------------------------------------- #
# linear algebra

def matmul(a, b):
    va, vb = value_of(a), value_of(b)
    out = va @ vb

    def grad_a(g):
        if va.ndim == 2 and vb.ndim == 2:
            return g @ vb.T
        if va.ndim == 2:
            return np.outer(g, vb)
        if vb.ndim == 2:
            return vb @ g
        return g * vb

    def grad_b(g):
        if va.ndim == 2 and vb.ndim == 2:
            return va.T @ g
        if va.ndim == 2:
            return va.T @ g
        if vb.ndim == 2:
            return np.outer(va, g)
        return g * va

    if va.ndim not in (1, 2) or vb.ndim not in (1, 2):
        raise ValueError(f"matmul supports 1-D and 2-D operands, got {va.shape} @ {vb.shape}")
    return _make("matmul", out, (a, b), (grad_a, grad_b))


def tri_solve(factor, b, lower=True, trans=False):
    """Solve ``factor @ x = b`` (or ``factor.T @ x = b``) against a constant triangular factor."""
    if isinstance(factor, Node):
        raise TypeError("tri_solve differentiates through the right-hand side only")
    L = np.asarray(factor, dtype=float)
    vb = value_of(b)
    out = sla.solve_triangular(L, vb, lower=lower, trans=1 if trans else 0)
    return _make("tri_solve", out, (b,),
                 (lambda g: sla.solve_triangular(L, g, lower=lower, trans=0 if trans else 1),))


def _cho(A, op):
    try:
        return sla.cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"{op}: matrix of shape {A.shape} is not positive definite") from exc


def spd_solve(A, b):
    """Solve ``A x = b`` for symmetric positive-definite ``A``; differentiable in both."""
    vA, vb = value_of(A), value_of(b)
    c = _cho(vA, "spd_solve")
    out = sla.cho_solve(c, vb)

    cache = {}

    def grad_b(g):
        # both vjps need A^-1 g; the backward pass calls them with the same g
        if cache.get("g") is not g:
            cache["g"], cache["gb"] = g, sla.cho_solve(c, g)
        return cache["gb"]

    def grad_A(g):
        gb = grad_b(g)
        return -np.outer(gb, out) if out.ndim == 1 else -gb @ out.T

    return _make("spd_solve", out, (A, b), (grad_A, grad_b))


def spd_logdet(A):
    vA = value_of(A)
    c = _cho(vA, "spd_logdet")
    out = 2.0 * np.sum(np.log(np.diag(c[0])))
    return _make("spd_logdet", out, (A,),
                 (lambda g: g * sla.cho_solve(c, np.eye(vA.shape[0])),))


# --------------------------------------------------------------------------- #
# reductions and structure

def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    va = value_of(a)
    out = np.sum(va, axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, va.shape).copy()

    return _make("sum", out, (a,), (vjp,))


def mean(a, axis=None):
    va = value_of(a)
    n = va.size if axis is None else va.shape[axis]
    return sum(a, axis) * (1.0 / n)


def logsumexp(a, axis=None):
    va = value_of(a)
    out = special.logsumexp(va, axis=axis)

    def vjp(g):
        o = out if axis is None else np.expand_dims(out, axis)
        g = g if axis is None else np.expand_dims(g, axis)
        return g * np.exp(va - o)

    return _make("logsumexp", out, (a,), (vjp,))


def log_softmax(a, axis=-1):
    va = value_of(a)
    lse = special.logsumexp(va, axis=axis, keepdims=True)
    out = va - lse
    soft = np.exp(out)
    return _make("log_softmax", out, (a,),
                 (lambda g: g - soft * np.sum(g, axis=axis, keepdims=True),))


def reshape(a, shape):
    va = value_of(a)
    return _make("reshape", va.reshape(shape), (a,), (lambda g: g.reshape(va.shape),))


def transpose(a):
    return _make("transpose", value_of(a).T, (a,), (lambda g: g.T,))


def getitem(a, index):
    va = value_of(a)

    def vjp(g):
        out = np.zeros_like(va)
        np.add.at(out, index, g)
        return out

    return _make("getitem", va[index], (a,), (vjp,))


def concat(parts: Sequence, axis=0):
    values = [value_of(p) for p in parts]
    sizes = np.cumsum([v.shape[axis] for v in values])[:-1]

    def piece(i):
        return lambda g: np.split(g, sizes, axis=axis)[i]

    return _make("concat", np.concatenate(values, axis=axis), tuple(parts),
                 tuple(piece(i) for i in range(len(parts))))


# --------------------------------------------------------------------------- #
# backward pass

def gradients(output: Node, wrt: Sequence[Node]) -> list[np.ndarray]:
    """Gradient of a scalar node with respect to each node in ``wrt``.

    Accumulation follows decreasing node id, which is a valid reverse
    topological order because a node is always created after its parents.
    """
    if not isinstance(output, Node):
        return [np.zeros_like(w.value) for w in wrt]
    if output.value.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.value.shape}")
    if output.consumed:
        raise GraphConsumedError("this graph has already been differentiated; rebuild it")
    output.consumed = True

    nodes = {}
    stack = [output]
    while stack:
        node = stack.pop()
        if node.id in nodes:
            continue
        nodes[node.id] = node
        stack.extend(p for p, _ in node.parents)

    grads = {output.id: np.ones_like(output.value)}
    for nid in sorted(nodes, reverse=True):
        g = grads.get(nid)
        if g is None:
            continue
        for parent, vjp in nodes[nid].parents:
            contrib = vjp(g)
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + contrib
            else:
                grads[parent.id] = np.asarray(contrib, dtype=float)
    return [np.array(grads.get(w.id, np.zeros_like(w.value)), dtype=float).reshape(w.value.shape)
            for w in wrt]


# --------------------------------------------------------------------------- #
# parameter vectors

@dataclass(frozen=True)
class ParamVector:
    """Flat parameter vector with a named-slice layout.

    ``layout`` is a tuple of ``(name, offset, shape)`` entries that tile
    ``data`` exactly.
    """

    data: np.ndarray
    layout: tuple

    def __post_init__(self):
        data = np.array(self.data, dtype=float).ravel()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        layout = tuple((str(n), int(o), tuple(int(s) for s in shp)) for n, o, shp in self.layout)
        object.__setattr__(self, "layout", layout)
        end = 0
        for name, offset, shape in layout:
            if offset != end:
                raise ValueError(f"layout gap or overlap at slice '{name}'")
            end = offset + int(np.prod(shape, dtype=int))
        if end != data.size:
            raise ValueError(f"layout covers {end} entries but data has {data.size}")

    @classmethod
    def pack(cls, arrays: dict) -> "ParamVector":
        layout, chunks, offset = [], [], 0
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=float)
            layout.append((name, offset, arr.shape))
            chunks.append(arr.ravel())
            offset += arr.size
        data = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(data, tuple(layout))

    def unpack(self) -> dict:
        return {name: self.data[o:o + int(np.prod(shape, dtype=int))].reshape(shape).copy()
                for name, o, shape in self.layout}

    def names(self):
        return [name for name, _, _ in self.layout]

    def __getitem__(self, name):
        for n, o, shape in self.layout:
            if n == name:
                return self.data[o:o + int(np.prod(shape, dtype=int))].reshape(shape)
        raise KeyError(name)

    def __len__(self):
        return self.data.size

    def with_data(self, data) -> "ParamVector":
        return ParamVector(np.asarray(data, dtype=float), self.layout)

    def replace(self, **arrays) -> "ParamVector":
        values = self.unpack()
        for name, arr in arrays.items():
            if name not in values:
                raise KeyError(name)
            values[name] = np.broadcast_to(np.asarray(arr, dtype=float), values[name].shape)
        return ParamVector.pack(values)

    def bind(self, leaf: Node) -> dict:
        """Named views of a leaf node holding this vector's data."""
        return {name: reshape(getitem(leaf, slice(o, o + int(np.prod(shape, dtype=int)))), shape)
                for name, o, shape in self.layout}

    def to_json(self) -> dict:
        return {"layout": [{"name": n, "offset": o, "shape": list(s)} for n, o, s in self.layout],
                "data": [float(v) for v in self.data]}

    @classmethod
    def from_json(cls, obj: dict) -> "ParamVector":
        layout = tuple((e["name"], e["offset"], tuple(e["shape"])) for e in obj["layout"])
        return cls(np.asarray(obj["data"], dtype=float), layout)


def forward(expr: Callable, params: ParamVector, *inputs) -> Node:
    """Evaluate ``expr(named_param_nodes, *inputs)`` and keep the graph for :func:`backward`."""
    leaf = Node(params.data.copy())
    out = expr(params.bind(leaf), *inputs)
    if not isinstance(out, Node):
        out = Node(out) if np.size(out) == 1 else out
    if np.size(value_of(out)) != 1:
        raise ValueError(f"expression must be scalar, got shape {np.shape(value_of(out))}")
    out.root = (leaf, params)
    return out


def backward(output: Node) -> ParamVector:
    """Gradient of a :func:`forward` output with respect to its parameter vector."""
    if output.root is None:
        raise ValueError("output was not produced by forward()")
    leaf, params = output.root
    (g,) = gradients(output, [leaf])
    return params.with_data(g)


def jvp_dot(fn: Callable, params: ParamVector, cotangent, *inputs) -> ParamVector:
    """Gradient of ``fn(params) . cotangent`` for a vector-valued ``fn``."""
    cot = np.asarray(cotangent, dtype=float)

    def contracted(p, *args):
        out = fn(p, *args)
        if np.shape(value_of(out)) != cot.shape:
            raise ValueError(f"cotangent shape {cot.shape} does not match output "
                             f"shape {np.shape(value_of(out))}")
        return sum(mul(out, cot))

    return backward(forward(contracted, params, *inputs))
