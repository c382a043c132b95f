"""Small reverse-mode automatic differentiation engine over float64 numpy arrays.

Operations on :class:`Tensor` are recorded on the active :class:`DiffGraph`
(a thread-local tape) whenever one of their inputs requires a gradient.  With
no active graph, or with only constant inputs, the same functions just
evaluate, which is how inference and the non-differentiable helpers reuse
them.

    with DiffGraph() as g:
        x = Tensor(np.array(3.0), requires_grad=True)
        y = x * x
    g.backward(y)
    x.grad  # 6.0
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.special

_state = threading.local()

LEAKY_SLOPE = 0.01
CHECK_FINITE = True


class GraphError(RuntimeError):
    pass


def _current() -> "DiffGraph | None":
    return getattr(_state, "graph", None)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __neg__ = lambda self: scale(self, -1.0)
    __matmul__ = lambda self, other: matmul(self, other)
    __getitem__ = lambda self, idx: index(self, idx)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)


class Parameter(Tensor):
    """Named trainable leaf."""

    __slots__ = ("init",)

    def __init__(self, data, name: str, init: str = ""):
        super().__init__(data, requires_grad=True, name=name)
        self.init = init


@dataclass
class _Node:
    out: Tensor
    parents: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


class DiffGraph:
    """Append-only tape of recorded operations; single use per backward."""

    def __init__(self, kink_tolerance: float = 0.0):
        self.nodes: list[_Node] = []
        self.consumed = False
        self.kink_tolerance = kink_tolerance
        self.kinks = 0
        self._prev = None

    def __enter__(self) -> "DiffGraph":
        self._prev = _current()
        _state.graph = self
        return self

    def __exit__(self, *exc) -> None:
        _state.graph = self._prev

    def reset(self) -> None:
        self.nodes.clear()
        self.consumed = False
        self.kinks = 0

    def record(self, node: _Node) -> None:
        if self.consumed:
            raise GraphError("graph already consumed by backward(); call reset() first")
        self.nodes.append(node)

    def backward(self, loss: Tensor, inputs: Sequence[Tensor] | None = None) -> list[np.ndarray] | None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

        If ``inputs`` is given, also return their gradients (zeros when the
        loss does not depend on them).
        """
        if self.consumed:
            raise GraphError("backward() called twice on the same graph")
        if loss.size != 1:
            raise GraphError(f"loss must be a scalar, got shape {loss.shape}")
        if not self.nodes and not loss.requires_grad:
            raise GraphError("backward() before any forward operation was recorded")
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if loss.requires_grad and not any(n.out is loss for n in self.nodes):
            leaves[id(loss)] = loss
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.backward(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if CHECK_FINITE and not _finite(pg):
                    raise FloatingPointError(f"non-finite gradient flowing out of {node.op}")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                leaves[key] = parent
        for key, g in grads.items():
            t = leaves.get(key)
            if t is None:
                continue
            t.grad = g if t.grad is None else t.grad + g
        if inputs is not None:
            return [grads.get(id(t), np.zeros_like(t.data)) for t in inputs]
        return None


def _finite(a: np.ndarray) -> bool:
    # one reduction; any nan or inf entry makes the sum non-finite
    return bool(np.isfinite(np.add.reduce(a, axis=None)))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    if CHECK_FINITE and not _finite(data):
        raise FloatingPointError(f"non-finite value produced by {op}")
    graph = _current()
    needs = graph is not None and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        graph.record(_Node(out, parents, backward, op))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


elementwise_mul = mul


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
        "div",
    )


def scale(a, c: float) -> Tensor:
    a = _lift(a)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def _unary(a, fn, dfn, op: str) -> Tensor:
    a = _lift(a)
    x = a.data
    y = fn(x)
    return _make(y, (a,), lambda g: (g * dfn(x, y),), op)


def exp(a) -> Tensor:
    return _unary(a, np.exp, lambda x, y: y, "exp")


def sin(a) -> Tensor:
    return _unary(a, np.sin, lambda x, y: np.cos(x), "sin")


def cos(a) -> Tensor:
    return _unary(a, np.cos, lambda x, y: -np.sin(x), "cos")


def sqrt(a) -> Tensor:
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y, "sqrt")


def square(a) -> Tensor:
    return _unary(a, np.square, lambda x, y: 2 * x, "square")


def _sigmoid(x):
    return scipy.special.expit(x)


def sigmoid(a) -> Tensor:
    return _unary(a, _sigmoid, lambda x, y: y * (1 - y), "sigmoid")


def silu(a) -> Tensor:
    def dsilu(x, y):
        s = _sigmoid(x)
        return s * (1 + x * (1 - s))

    return _unary(a, lambda x: x * _sigmoid(x), dsilu, "silu")


def tanh(a) -> Tensor:
    return _unary(a, np.tanh, lambda x, y: 1 - y * y, "tanh")


def _note_kinks(x: np.ndarray) -> None:
    graph = _current()
    if graph is not None and graph.kink_tolerance > 0 and np.any(np.abs(x) < graph.kink_tolerance):
        graph.kinks += 1


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = _lift(a)
    _note_kinks(a.data)
    return _unary(a, lambda x: np.where(x > 0, x, slope * x), lambda x, y: np.where(x > 0, 1.0, slope), "leaky_relu")


def absolute(a) -> Tensor:
    a = _lift(a)
    _note_kinks(a.data)
    return _unary(a, np.abs, lambda x, y: np.sign(x), "abs")


# --------------------------------------------------------------------------
# reductions and shape
# --------------------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    n = a.size if axis is None else np.prod([a.shape[k] for k in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def norm(a, axis=-1, keepdims: bool = False) -> Tensor:
    """Euclidean norm; the gradient at an exactly zero vector is taken as zero."""
    a = _lift(a)
    x = a.data
    n = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, g * x / safe, 0.0),)

    return _make(n if keepdims else np.squeeze(n, axis), (a,), back, "norm")


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def index(a, idx) -> Tensor:
    """``a[idx]`` for basic slices or an integer index array along axis 0."""
    a = _lift(a)
    shape = a.shape
    fancy = isinstance(idx, np.ndarray) or isinstance(idx, list)

    def back(g):
        out = np.zeros(shape)
        if fancy:
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return _make(a.data[idx], (a,), back, "index")


def gather(a, idx: np.ndarray) -> Tensor:
    return index(a, np.asarray(idx, dtype=np.int64))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=axis) for k in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back, "concat")


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), back, "matmul")


def channel_mix(x, weight) -> Tensor:
    """``out[n, d, m] = sum_c x[n, c, m] weight[c, d]`` for ``x`` of shape ``(n, c, m)``."""
    x, weight = _lift(x), _lift(weight)
    xd, wd = x.data, weight.data
    n, c, m = xd.shape

    def back(g):
        gx = np.matmul(wd, g) if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = xd.transpose(1, 0, 2).reshape(c, n * m) @ g.transpose(1, 0, 2).reshape(-1, n * m).T
        return gx, gw

    return _make(np.matmul(wd.T, xd), (x, weight), back, "channel_mix")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight (+ bias)`` with ``weight`` of shape (in, out)."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def einsum(spec: str, *operands) -> Tensor:
    """Differentiable ``np.einsum`` for explicit specs without repeated indices."""
    ins, out_sub = spec.replace(" ", "").split("->")
    subs = ins.split(",")
    ops = [_lift(o) for o in operands]
    if len(subs) != len(ops):
        raise ValueError(f"einsum spec {spec!r} expects {len(subs)} operands, got {len(ops)}")
    for s, o in zip(subs, ops):
        if len(s) != o.ndim or len(set(s)) != len(s):
            raise ValueError(f"einsum subscript {s!r} does not fit operand of shape {o.shape}")
    arrays = [o.data for o in ops]
    data = np.einsum(spec, *arrays, optimize=True)

    def back(g):
        grads = []
        for k, (s, o) in enumerate(zip(subs, ops)):
            if not o.requires_grad:
                grads.append(None)
                continue
            others = [(subs[j], arrays[j]) for j in range(len(ops)) if j != k]
            available = set(out_sub).union(*[set(t) for t, _ in others])
            kept = "".join(c for c in s if c in available)
            gs = ",".join([out_sub] + [t for t, _ in others]) + "->" + kept
            gk = np.einsum(gs, g, *[a for _, a in others], optimize=True)
            if kept != s:
                shape = [o.shape[i] if c in kept else 1 for i, c in enumerate(s)]
                order = [kept.index(c) for c in s if c in kept]
                gk = np.transpose(gk, order).reshape(shape)
                gk = np.broadcast_to(gk, o.shape).copy()
            grads.append(gk)
        return grads

    return _make(np.asarray(data, dtype=np.float64), tuple(ops), back, "einsum")


def cg_contract(x, y, C, depthwise: bool | None = None) -> Tensor:
    """Couple ``x (n, c, 2l1+1)`` with ``y (n, c|1, 2l2+1)`` through ``C (2l1+1, 2l2+1, 2l3+1)``."""
    x, y = _lift(x), _lift(y)
    if depthwise is None:
        depthwise = y.shape[-2] != 1
    if depthwise:
        return einsum("nci,ncj,ijk->nck", x, y, C)
    return einsum("nci,nj,ijk->nck", x, reshape(y, (y.shape[0], y.shape[-1])), C)


# --------------------------------------------------------------------------
# segment operations
# --------------------------------------------------------------------------


def segment_sum(x, segments: np.ndarray, n_segments: int) -> Tensor:
    """Scatter-add rows of ``x`` into ``n_segments`` buckets."""
    x = _lift(x)
    seg = np.asarray(segments, dtype=np.int64)
    out = np.zeros((n_segments, *x.shape[1:]))
    np.add.at(out, seg, x.data)
    return _make(out, (x,), lambda g: (g[seg],), "segment_sum")


gather_scatter_sum = segment_sum


def segment_softmax(x, segments: np.ndarray, n_segments: int) -> Tensor:
    """Softmax over the rows sharing a segment id (independently per trailing column)."""
    x = _lift(x)
    seg = np.asarray(segments, dtype=np.int64)
    xd = x.data
    mx = np.full((n_segments, *xd.shape[1:]), -np.inf)
    np.maximum.at(mx, seg, xd)
    e = np.exp(xd - mx[seg])
    den = np.zeros_like(mx)
    np.add.at(den, seg, e)
    s = e / den[seg]

    def back(g):
        gs = np.zeros_like(mx)
        np.add.at(gs, seg, g * s)
        return (s * (g - gs[seg]),)

    return _make(s, (x,), back, "segment_softmax")


softmax_over_group = segment_softmax


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    max_abs_error: float
    kink_flagged: bool
    analytic: list[np.ndarray]
    numeric: list[np.ndarray]


def grad_check(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5) -> GradCheckResult:
    """Compare reverse-mode gradients of scalar ``f(*tensors)`` with central differences.

    The relative error is ``max |analytic - numeric| / max |numeric|`` over all
    coordinates.  ``kink_flagged`` reports that a leaky ReLU or absolute value
    saw an input within ``h`` of its kink, where the comparison is unreliable.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with DiffGraph(kink_tolerance=h) as g:
        out = f(*leaves)
    analytic = g.backward(out, leaves)
    kinks = g.kinks > 0
    numeric = []
    for a in arrays:
        num = np.zeros_like(a)
        flat = a.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = f(*[Tensor(b) for b in arrays]).item()
            flat[k] = orig - h
            fm = f(*[Tensor(b) for b in arrays]).item()
            flat[k] = orig
            num.reshape(-1)[k] = (fp - fm) / (2 * h)
        numeric.append(num)
    abs_err = max((np.abs(x - y).max() for x, y in zip(analytic, numeric) if x.size), default=0.0)
    scale_ = max((np.abs(y).max() for y in numeric if y.size), default=0.0)
    rel = abs_err / scale_ if scale_ > 0 else abs_err
    return GradCheckResult(float(rel), float(abs_err), kinks, analytic, numeric)


def custom_op(data: np.ndarray, parents: Sequence, backward, op: str) -> Tensor:
    """Record a user-defined primitive; ``backward(g)`` returns one gradient (or None) per parent."""
    return _make(np.asarray(data, dtype=np.float64), tuple(_lift(p) for p in parents), backward, op)
