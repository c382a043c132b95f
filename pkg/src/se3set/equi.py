"""Equivariant building blocks: radial bases, tensor products, gates and norms.

Features inside the network are :class:`Feat` objects, an :class:`Irreps`
signature plus one autograd :class:`Tensor` per block of shape
``(n, mul, 2l+1)``.  The public functions taking :class:`IrrepsTensor` wrap the
same routines for plain numpy use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .o3 import Irrep, Irreps, IrrepsError, IrrepsTensor, cg_coefficient, sh_recursion_factor

RADIAL_KINDS = ("gaussian", "bessel", "exponential")
NORM_EPS = 1e-6


# --------------------------------------------------------------------------
# radial basis
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialBasisSpec:
    kind: str = "gaussian"
    count: int = 16
    cutoff: float = 8.0

    def __post_init__(self):
        if self.kind not in RADIAL_KINDS:
            raise ValueError(f"unknown radial basis kind {self.kind!r}")
        if int(self.count) != self.count or self.count < 1:
            raise ValueError("radial basis count must be a positive integer")
        if not self.cutoff > 0:
            raise ValueError("radial basis cutoff must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "count": self.count, "cutoff": self.cutoff}


def cosine_envelope(d: np.ndarray, cutoff: float) -> tuple[np.ndarray, np.ndarray]:
    """``0.5 (cos(pi d / c) + 1)`` inside the cutoff, zero outside; value and derivative."""
    inside = d < cutoff
    arg = np.pi * np.minimum(d, cutoff) / cutoff
    env = np.where(inside, 0.5 * (np.cos(arg) + 1.0), 0.0)
    denv = np.where(inside, -0.5 * np.pi / cutoff * np.sin(arg), 0.0)
    return env, denv


def radial_basis_with_derivative(d, spec: RadialBasisSpec, allow_zero: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Basis values ``(..., count)`` and their derivative with respect to ``d``.

    ``allow_zero`` admits ``d == 0`` (the self pair), where the Bessel family
    takes its finite limit ``sqrt(2/c) k pi / c``.
    """
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0) or (not allow_zero and np.any(d <= 0)):
        raise ValueError("radial basis needs positive distances")
    c, K = spec.cutoff, spec.count
    x = d[..., None]
    if spec.kind == "gaussian":
        mu = np.linspace(0.0, c, K)
        gamma = (K / c) ** 2
        b = np.exp(-gamma * (x - mu) ** 2)
        db = -2.0 * gamma * (x - mu) * b
    elif spec.kind == "bessel":
        k = np.arange(1, K + 1) * np.pi / c
        pref = math.sqrt(2.0 / c)
        small = x < 1e-8
        xs = np.where(small, 1.0, x)
        b = np.where(small, pref * k, pref * np.sin(k * xs) / xs)
        db = np.where(small, 0.0, pref * (k * np.cos(k * xs) * xs - np.sin(k * xs)) / xs**2)
    else:
        beta = np.geomspace(0.1, 10.0, K)
        b = np.exp(-beta * x)
        db = -beta * b
    env, denv = cosine_envelope(x, c)
    return b * env, db * env + b * denv


def radial_basis(d, spec: RadialBasisSpec) -> np.ndarray:
    """Radial features of distance ``d`` (scalar or array), smoothly cut off at ``spec.cutoff``."""
    return radial_basis_with_derivative(d, spec)[0]


def radial_basis_t(d: Tensor, spec: RadialBasisSpec, allow_zero: bool = False) -> Tensor:
    """Differentiable radial basis of a ``(P,)`` distance tensor, shape ``(P, count)``."""
    val, der = radial_basis_with_derivative(d.data, spec, allow_zero)
    return ag.custom_op(val, (d,), lambda g: ((g * der).sum(axis=-1),), "radial_basis")


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------


class Feat:
    """Irreps-typed batch of features, one ``(n, mul, 2l+1)`` tensor per block."""

    __slots__ = ("irreps", "blocks")

    def __init__(self, irreps, blocks: Sequence[Tensor]):
        self.irreps = Irreps(irreps)
        self.blocks = list(blocks)
        if len(self.blocks) != len(self.irreps):
            raise IrrepsError("one block per irreps entry required")
        for b, (mul, ir) in zip(self.blocks, self.irreps):
            if b.shape[1:] != (mul, ir.dim):
                raise IrrepsError(f"block shape {b.shape} does not match {mul}x{ir}")

    @property
    def n(self) -> int:
        return self.blocks[0].shape[0]

    @classmethod
    def zeros(cls, irreps, n: int) -> "Feat":
        irreps = Irreps(irreps)
        return cls(irreps, [Tensor(np.zeros((n, mul, ir.dim))) for mul, ir in irreps])

    @classmethod
    def from_irreps_tensor(cls, x: IrrepsTensor) -> "Feat":
        arr = x.array.reshape(-1, x.irreps.dim)
        return cls(x.irreps, [Tensor(b) for b in IrrepsTensor(x.irreps, arr).blocks()])

    def to_irreps_tensor(self) -> IrrepsTensor:
        return IrrepsTensor.from_blocks(self.irreps, [b.data for b in self.blocks])

    def numpy(self) -> np.ndarray:
        return self.to_irreps_tensor().array

    def gather(self, idx: np.ndarray) -> "Feat":
        return Feat(self.irreps, [ag.gather(b, idx) for b in self.blocks])

    def __add__(self, other: "Feat") -> "Feat":
        if self.irreps != other.irreps:
            raise IrrepsError(f"cannot add {self.irreps} and {other.irreps}")
        return Feat(self.irreps, [a + b for a, b in zip(self.blocks, other.blocks)])

    def scalars(self) -> Tensor:
        """The first ``0e`` block as ``(n, mul)``."""
        for b, (mul, ir) in zip(self.blocks, self.irreps):
            if ir == Irrep(0, 1):
                return ag.reshape(b, (b.shape[0], mul))
        raise IrrepsError(f"{self.irreps} has no 0e block")

    def to_uniform(self) -> Tensor:
        """Concatenate blocks of equal multiplicity into ``(n, mul, sum(2l+1))``."""
        muls = {mul for mul, _ in self.irreps}
        if len(muls) != 1:
            raise IrrepsError(f"{self.irreps} does not have a uniform multiplicity")
        return self.blocks[0] if len(self.blocks) == 1 else ag.concat(self.blocks, axis=2)

    @classmethod
    def from_uniform(cls, irreps, x: Tensor) -> "Feat":
        irreps = Irreps(irreps)
        blocks, start = [], 0
        for _, ir in irreps:
            blocks.append(ag.index(x, (slice(None), slice(None), slice(start, start + ir.dim))))
            start += ir.dim
        return cls(irreps, blocks)


def uniform_irreps(mul: int, l_max: int) -> Irreps:
    """``mul`` copies of every ``l`` up to ``l_max`` with the parity of spherical harmonics."""
    return Irreps([(mul, l, 1 if l % 2 == 0 else -1) for l in range(l_max + 1)])


def sh_irreps(l_max: int) -> Irreps:
    return uniform_irreps(1, l_max)


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


class ParamStore:
    """Ordered registry of uniquely named parameters with seeded initialisation."""

    def __init__(self, rng: np.random.Generator | None = None):
        self.params: dict[str, Parameter] = {}
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def new(self, name: str, shape: tuple[int, ...], init: str, value: float = 0.0, fan_in: int | None = None) -> Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if init == "fan_in":
            bound = math.sqrt(3.0 / (fan_in or shape[0]))
            data = self.rng.uniform(-bound, bound, size=shape)
        elif init == "embedding":
            data = 0.02 * self.rng.standard_normal(shape)
        elif init == "const":
            data = np.full(shape, float(value))
        else:
            raise ValueError(f"unknown init {init!r}")
        p = Parameter(data, name, init)
        self.params[name] = p
        return p

    def __len__(self) -> int:
        return len(self.params)


# --------------------------------------------------------------------------
# linear
# --------------------------------------------------------------------------


class IrrepsLinear:
    """Channel mixing within each irrep type; biases only on ``0e`` outputs.

    Output blocks whose irrep does not occur in the input are zero.
    """

    def __init__(self, store: ParamStore, name: str, irreps_in, irreps_out, bias: bool = True):
        self.irreps_in, self.irreps_out = Irreps(irreps_in), Irreps(irreps_out)
        self.weights: list[list[tuple[int, Parameter]]] = []
        self.biases: list[Parameter | None] = []
        for k, (mul_out, ir_out) in enumerate(self.irreps_out):
            sources = [(a, mul) for a, (mul, ir) in enumerate(self.irreps_in) if ir == ir_out]
            fan_in = sum(mul for _, mul in sources)
            row = []
            for a, mul in sources:
                row.append((a, store.new(f"{name}.w{a}_{k}", (mul, mul_out), "fan_in", fan_in=fan_in)))
            self.weights.append(row)
            if bias and ir_out == Irrep(0, 1):
                self.biases.append(store.new(f"{name}.b{k}", (mul_out, 1), "const"))
            else:
                self.biases.append(None)

    def __call__(self, x: Feat) -> Feat:
        if x.irreps != self.irreps_in:
            raise IrrepsError(f"linear expects {self.irreps_in}, got {x.irreps}")
        n = x.n
        blocks = []
        for (mul_out, ir_out), row, b in zip(self.irreps_out, self.weights, self.biases):
            out = None
            for a, w in row:
                term = ag.channel_mix(x.blocks[a], w)
                out = term if out is None else out + term
            if out is None:
                out = Tensor(np.zeros((n, mul_out, ir_out.dim)))
            if b is not None:
                out = out + b
            blocks.append(out)
        return Feat(self.irreps_out, blocks)


# --------------------------------------------------------------------------
# depth-wise tensor product
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TPPath:
    i_x: int
    i_y: int
    i_out: int
    l1: int
    l2: int
    l3: int


def dtp_paths(irreps_x, irreps_y, irreps_out) -> tuple[TPPath, ...]:
    """All channel-aligned coupling paths, checked for reachability of every output block."""
    irreps_x, irreps_y, irreps_out = Irreps(irreps_x), Irreps(irreps_y), Irreps(irreps_out)
    muls_x = {mul for mul, _ in irreps_x}
    muls_y = {mul for mul, _ in irreps_y}
    muls_o = {mul for mul, _ in irreps_out}
    if len(muls_x) != 1 or len(muls_o) != 1 or muls_x != muls_o:
        raise IrrepsError("depth-wise product needs one common multiplicity for x and output")
    if not (muls_y == muls_x or muls_y == {1}):
        raise IrrepsError("y must match the multiplicity of x or have multiplicity 1")
    paths = []
    for k, (_, ir3) in enumerate(irreps_out):
        found = False
        for a, (_, ir1) in enumerate(irreps_x):
            for b, (_, ir2) in enumerate(irreps_y):
                if ir3 in ir1 * ir2:
                    paths.append(TPPath(a, b, k, ir1.l, ir2.l, ir3.l))
                    found = True
        if not found:
            parities = any(ir3.l in range(abs(i1.l - i2.l), i1.l + i2.l + 1) for _, i1 in irreps_x for _, i2 in irreps_y)
            reason = "parity mismatch" if parities else "unreachable"
            raise IrrepsError(f"output block {ir3} is {reason} from {irreps_x} x {irreps_y}")
    return tuple(paths)


@dataclass(frozen=True)
class _PathPlan:
    paths: tuple[TPPath, ...]
    T: np.ndarray  # (Dx * Dy, K): every path's CG tensor in its own column range
    scatter: np.ndarray  # (K, Dout): column -> output component
    col_path: np.ndarray  # (K,): path id of every column
    path_sum: np.ndarray  # (K, n_paths): column -> path indicator
    dx: int
    dy: int
    dout: int


@lru_cache(maxsize=None)
def _path_plan(irreps_x: Irreps, irreps_y: Irreps, irreps_out: Irreps) -> _PathPlan:
    paths = dtp_paths(irreps_x, irreps_y, irreps_out)

    def offsets(irreps):
        out, start = [], 0
        for _, ir in irreps:
            out.append(start)
            start += ir.dim
        return out, start

    (ox, dx), (oy, dy), (oo, dout) = offsets(irreps_x), offsets(irreps_y), offsets(irreps_out)
    K = sum(2 * p.l3 + 1 for p in paths)
    T = np.zeros((dx, dy, K))
    scatter = np.zeros((K, dout))
    col_path = np.zeros(K, dtype=np.int64)
    col = 0
    for k, p in enumerate(paths):
        C = cg_coefficient(p.l1, p.l2, p.l3)
        w3 = 2 * p.l3 + 1
        T[ox[p.i_x] : ox[p.i_x] + 2 * p.l1 + 1, oy[p.i_y] : oy[p.i_y] + 2 * p.l2 + 1, col : col + w3] = C
        scatter[col + np.arange(w3), oo[p.i_out] + np.arange(w3)] = 1.0
        col_path[col : col + w3] = k
        col += w3
    path_sum = np.zeros((K, len(paths)))
    path_sum[np.arange(K), col_path] = 1.0
    return _PathPlan(paths, T.reshape(dx * dy, K), scatter, col_path, path_sum, dx, dy, dout)


def dtp_uniform(x: Tensor, y: Tensor, w: Tensor, irreps_x, irreps_y, irreps_out) -> Tensor:
    """Fused depth-wise tensor product on uniform layouts.

    ``x`` is ``(n, c, Dx)``, ``y`` is ``(n, c, Dy)`` or ``(n, 1, Dy)``, ``w`` is
    ``(n, n_paths)`` or ``(n_paths,)``; the result is ``(n, c, Dout)``.  All
    paths are evaluated by one matrix product of the channel-wise outer
    product ``x y^T`` with the stacked coupling tensors.
    """
    plan = _path_plan(Irreps(irreps_x), Irreps(irreps_y), Irreps(irreps_out))
    xd, yd, wd = x.data, y.data, w.data
    if wd.shape[-1] != len(plan.paths):
        raise IrrepsError(f"expected {len(plan.paths)} path weights, got {wd.shape[-1]}")
    if xd.shape[2] != plan.dx or yd.shape[2] != plan.dy:
        raise IrrepsError("x or y does not match the declared irreps")
    n, c = xd.shape[0], xd.shape[1]
    dx, dy, K = plan.dx, plan.dy, plan.T.shape[1]
    broadcast = yd.shape[1] == 1
    if broadcast:
        # contract y into the coupling tensor first: Ty[n, i, K]
        T3 = plan.T.reshape(dx, dy, K)
        Ty = (yd[:, 0, :] @ T3.transpose(1, 0, 2).reshape(dy, dx * K)).reshape(n, dx, K)
        units = np.matmul(xd, Ty)
    else:
        outer = (xd[:, :, :, None] * yd[:, :, None, :]).reshape(n * c, dx * dy)
        units = (outer @ plan.T).reshape(n, c, K)
    wcol = wd[..., plan.col_path]
    wcol = wcol[:, None, :] if wd.ndim == 2 else wcol
    out = (units * wcol) @ plan.scatter

    def back(g):
        gu = g @ plan.scatter.T
        gw = None
        if w.requires_grad:
            if wd.ndim == 2:
                gw = (gu * units).sum(axis=1) @ plan.path_sum
            else:
                gw = (gu * units).sum(axis=(0, 1)) @ plan.path_sum
        gx = gy = None
        guw = gu * wcol
        if broadcast:
            if x.requires_grad:
                gx = np.matmul(guw, Ty.transpose(0, 2, 1))
            if y.requires_grad:
                gTy = np.matmul(xd.transpose(0, 2, 1), guw)  # (n, dx, K)
                gy = (gTy.reshape(n, dx * K) @ T3.transpose(0, 2, 1).reshape(dx * K, dy))[:, None, :]
        elif x.requires_grad or y.requires_grad:
            g_outer = (guw.reshape(n * c, K) @ plan.T.T).reshape(n, c, dx, dy)
            if x.requires_grad:
                gx = np.matmul(g_outer, yd[:, :, :, None])[..., 0]
            if y.requires_grad:
                gy = np.matmul(xd[:, :, None, :], g_outer)[:, :, 0, :]
        return gx, gy, gw

    return ag.custom_op(out, (x, y, w), back, "dtp")


def dtp_feat(x: Feat, y: Feat, w: Tensor, irreps_out) -> Feat:
    irreps_out = Irreps(irreps_out)
    out = dtp_uniform(x.to_uniform(), y.to_uniform(), w, x.irreps, y.irreps, irreps_out)
    return Feat.from_uniform(irreps_out, out)


def depthwise_tensor_product(x: IrrepsTensor, y: IrrepsTensor, weights, out_sig) -> IrrepsTensor:
    """Channel-aligned CG product ``sum_paths w_path C (x (x) y)`` of two irreps tensors.

    ``weights`` has one entry per path of :func:`dtp_paths` (or a leading batch
    axis matching the rows of ``x``).
    """
    fx, fy = Feat.from_irreps_tensor(x), Feat.from_irreps_tensor(y)
    if fy.n != fx.n:
        if fy.n != 1:
            raise IrrepsError("x and y need the same number of rows")
        fy = fy.gather(np.zeros(fx.n, dtype=np.int64))
    out = dtp_feat(fx, fy, Tensor(np.asarray(weights, dtype=np.float64)), out_sig)
    arr = out.numpy()
    return IrrepsTensor(out.irreps, arr.reshape(*x.array.shape[:-1], -1))


# --------------------------------------------------------------------------
# gate and norm
# --------------------------------------------------------------------------


def gate_input_irreps(irreps_out, scalar_act: bool = True) -> Irreps:
    """Irreps a gate must receive to produce ``irreps_out`` (gates appended to the 0e block)."""
    irreps_out = Irreps(irreps_out)
    n_gates = sum(mul for mul, ir in irreps_out if ir.l > 0)
    items, placed = [], False
    for mul, ir in irreps_out:
        if ir == Irrep(0, 1) and not placed:
            items.append((mul + n_gates, ir))
            placed = True
        else:
            items.append((mul, ir))
    if not placed and n_gates:
        items.insert(0, (n_gates, Irrep(0, 1)))
    return Irreps(items)


def gate_output_irreps(irreps_in) -> Irreps:
    irreps_in = Irreps(irreps_in)
    n_gates = sum(mul for mul, ir in irreps_in if ir.l > 0)
    items = []
    for mul, ir in irreps_in:
        if ir == Irrep(0, 1) and n_gates:
            if mul < n_gates:
                raise IrrepsError(f"{irreps_in} lacks the {n_gates} gate scalars it needs")
            if mul > n_gates:
                items.append((mul - n_gates, ir))
            n_gates = 0
        else:
            items.append((mul, ir))
    if n_gates:
        raise IrrepsError(f"{irreps_in} has no 0e block to supply {n_gates} gate scalars")
    return Irreps(items)


def gate_feat(x: Feat) -> Feat:
    """Even scalars through SiLU, odd scalars through tanh, higher l scaled by sigmoid gates.

    The last ``G`` channels of the first ``0e`` block are the gates, one per
    non-scalar channel taken in block order.
    """
    out_irreps = gate_output_irreps(x.irreps)
    n_gates = sum(mul for mul, ir in x.irreps if ir.l > 0)
    gates = None
    blocks = []
    start = 0
    for b, (mul, ir) in zip(x.blocks, x.irreps):
        if ir == Irrep(0, 1) and gates is None and n_gates:
            keep = mul - n_gates
            gates = ag.sigmoid(ag.index(b, (slice(None), slice(keep, mul))))
            if keep:
                blocks.append(ag.silu(ag.index(b, (slice(None), slice(0, keep)))))
        elif ir.l == 0:
            blocks.append(ag.silu(b) if ir.p == 1 else ag.tanh(b))
        else:
            # gates always precede the gated blocks in a valid gate input
            blocks.append(b * ag.index(gates, (slice(None), slice(start, start + mul))))
            start += mul
    return Feat(out_irreps, blocks)


def gate(x: IrrepsTensor) -> IrrepsTensor:
    """Gate nonlinearity on a plain irreps tensor (rows are samples)."""
    return gate_feat(Feat.from_irreps_tensor(x)).to_irreps_tensor()


class EquiLayerNorm:
    """Per-block normalisation that commutes with rotations.

    ``0e``/``0o`` blocks are centred and divided by their standard deviation
    across channels; ``l > 0`` blocks are divided by the root mean square of
    the channel norms.  Learnable per-channel scale, bias on ``0e`` only.
    """

    def __init__(self, store: ParamStore, name: str, irreps, eps: float = NORM_EPS):
        self.irreps = Irreps(irreps)
        self.eps = eps
        self.scales = [store.new(f"{name}.s{k}", (mul, 1), "const", 1.0) for k, (mul, _) in enumerate(self.irreps)]
        self.biases = [
            store.new(f"{name}.b{k}", (mul, 1), "const", 0.0) if ir == Irrep(0, 1) else None
            for k, (mul, ir) in enumerate(self.irreps)
        ]

    def __call__(self, x: Feat) -> Feat:
        return layer_norm_feat(x, self.scales, self.biases, self.eps)


def layer_norm_feat(x: Feat, scales=None, biases=None, eps: float = NORM_EPS) -> Feat:
    blocks = []
    for k, (b, (mul, ir)) in enumerate(zip(x.blocks, x.irreps)):
        if ir.l == 0:
            centred = b - ag.mean(b, axis=1, keepdims=True)
            var = ag.mean(ag.square(centred), axis=1, keepdims=True)
            y = centred / ag.sqrt(var + eps)
        else:
            ms = ag.mean(ag.tsum(ag.square(b), axis=2, keepdims=True), axis=1, keepdims=True)
            y = b / ag.sqrt(ms + eps)
        if scales is not None:
            y = y * scales[k]
        if biases is not None and biases[k] is not None:
            y = y + biases[k]
        blocks.append(y)
    return Feat(x.irreps, blocks)


def equivariant_layer_norm(x: IrrepsTensor, eps: float = NORM_EPS) -> IrrepsTensor:
    """Layer norm with unit scale and zero bias on a plain irreps tensor."""
    return layer_norm_feat(Feat.from_irreps_tensor(x), eps=eps).to_irreps_tensor()


# --------------------------------------------------------------------------
# spherical harmonics on the tape
# --------------------------------------------------------------------------


def spherical_harmonics_t(vec: Tensor, l_max: int) -> list[Tensor]:
    """Real SH of the directions of ``vec`` ``(P, 3)``, one ``(P, 2l+1)`` tensor per l.

    Built by the Clebsch-Gordan recursion so that gradients flow to ``vec``.
    """
    P = vec.shape[0]
    out = [Tensor(np.full((P, 1), 0.5 / math.sqrt(math.pi)))]
    if l_max == 0:
        return out
    if np.any(np.linalg.norm(vec.data, axis=1) == 0):
        raise ValueError("direction undefined for a zero vector")
    u = vec / ag.norm(vec, axis=1, keepdims=True)
    y1 = ag.scale(ag.index(u, (slice(None), [1, 2, 0])), math.sqrt(3.0 / (4.0 * math.pi)))
    out.append(y1)
    y1c = ag.reshape(y1, (P, 1, 3))
    for l in range(1, l_max):
        yl = ag.reshape(out[l], (P, 1, 2 * l + 1))
        nxt = ag.einsum("nci,ncj,ijk->nck", yl, y1c, cg_coefficient(l, 1, l + 1))
        out.append(ag.scale(ag.reshape(nxt, (P, 2 * l + 3)), 1.0 / sh_recursion_factor(l)))
    return out


def sh_feat(vec: Tensor, l_max: int, self_mask: np.ndarray | None = None) -> Feat:
    """SH of pair vectors as a multiplicity-1 feature.

    Rows flagged in ``self_mask`` (an atom paired with itself) have no
    direction; they get ``Y_0`` and zeros for ``l > 0``.
    """
    P = vec.shape[0]
    if self_mask is None or not self_mask.any():
        blocks = spherical_harmonics_t(vec, l_max)
    else:
        keep = np.flatnonzero(~self_mask)
        inner = spherical_harmonics_t(ag.gather(vec, keep), l_max)
        blocks = [Tensor(np.full((P, 1), 0.5 / math.sqrt(math.pi)))]
        blocks += [ag.segment_sum(inner[l], keep, P) for l in range(1, l_max + 1)]
    return Feat(sh_irreps(l_max), [ag.reshape(b, (P, 1, b.shape[1])) for b in blocks])


# --------------------------------------------------------------------------
# small helpers
# --------------------------------------------------------------------------


class RadialMLP:
    """Two-layer perceptron mapping radial features to per-pair path weights."""

    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, hidden: int = 64):
        self.w1 = store.new(f"{name}.w1", (n_in, hidden), "fan_in")
        self.b1 = store.new(f"{name}.b1", (hidden,), "const")
        self.w2 = store.new(f"{name}.w2", (hidden, n_out), "fan_in")
        self.b2 = store.new(f"{name}.b2", (n_out,), "const", 1.0 / math.sqrt(n_out))

    def __call__(self, rbf: Tensor) -> Tensor:
        return ag.linear(ag.silu(ag.linear(rbf, self.w1, self.b1)), self.w2, self.b2)
