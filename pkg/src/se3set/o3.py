"""Irreps bookkeeping, real spherical harmonics, Clebsch-Gordan tensors and Wigner-D.

Conventions used throughout the package:

* real spherical harmonics, integral normalised (``int |Y|^2 dOmega = 1``),
  components ordered ``m = -l .. l``; the l=1 block is ``sqrt(3/4pi) (y, z, x)``;
* real Clebsch-Gordan tensors ``C[m1, m2, m3]`` obtained from the complex
  (Condon-Shortley) coefficients by the same unitary change of basis that maps
  complex to real harmonics, so that ``sum C Y_l1 Y_l2`` is proportional to ``Y_l3``;
* ``wigner_d(l, R) @ Y_l(u) == Y_l(R @ u)``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
from scipy.spatial.transform import Rotation

L_MAX = 4


class IrrepsError(ValueError):
    pass


@dataclass(frozen=True)
class Irrep:
    l: int
    p: int  # +1 even, -1 odd

    def __post_init__(self):
        if self.l < 0 or self.p not in (1, -1):
            raise IrrepsError(f"invalid irrep l={self.l} p={self.p}")

    @property
    def dim(self) -> int:
        return 2 * self.l + 1

    def __mul__(self, other: "Irrep") -> list["Irrep"]:
        p = self.p * other.p
        return [Irrep(l, p) for l in range(abs(self.l - other.l), self.l + other.l + 1)]

    def __str__(self) -> str:
        return f"{self.l}{'e' if self.p == 1 else 'o'}"


class Irreps(tuple):
    """Ordered tuple of ``(mul, Irrep)`` blocks, e.g. ``Irreps("16x0e+8x1o+4x2e")``."""

    def __new__(cls, spec: "str | Iterable" = ()):
        if isinstance(spec, Irreps):
            return spec
        items = []
        if isinstance(spec, str):
            for part in spec.replace(" ", "").split("+"):
                if not part:
                    continue
                m = re.fullmatch(r"(?:(\d+)x)?(\d+)([eo])", part)
                if m is None:
                    raise IrrepsError(f"cannot parse irreps term {part!r}")
                mul = int(m.group(1) or 1)
                items.append((mul, Irrep(int(m.group(2)), 1 if m.group(3) == "e" else -1)))
        else:
            for entry in spec:
                if len(entry) == 3:
                    mul, l, p = entry
                    if isinstance(p, str):
                        p = 1 if p == "e" else -1
                    items.append((int(mul), Irrep(int(l), int(p))))
                else:
                    mul, ir = entry
                    if isinstance(ir, str):
                        ir = Irreps(f"1x{ir}")[0][1]
                    items.append((int(mul), ir))
        for mul, _ in items:
            if mul < 1:
                raise IrrepsError("multiplicities must be positive")
        return super().__new__(cls, items)

    @property
    def dim(self) -> int:
        return sum(mul * ir.dim for mul, ir in self)

    @property
    def lmax(self) -> int:
        return max(ir.l for _, ir in self)

    def mul_of(self, ir: Irrep) -> int:
        return sum(mul for mul, i in self if i == ir)

    def irreps(self) -> list[Irrep]:
        return [ir for _, ir in self]

    def is_simplified(self) -> bool:
        irs = self.irreps()
        return len(irs) == len(set(irs))

    def slices(self) -> list[slice]:
        out, start = [], 0
        for mul, ir in self:
            out.append(slice(start, start + mul * ir.dim))
            start += mul * ir.dim
        return out

    def __str__(self) -> str:
        return "+".join(f"{mul}x{ir}" for mul, ir in self)

    def __repr__(self) -> str:
        return f"Irreps({str(self)!r})"

    def to_list(self) -> list[list]:
        return [[mul, ir.l, "e" if ir.p == 1 else "o"] for mul, ir in self]


@dataclass(frozen=True)
class IrrepsTensor:
    """Irreps signature plus a ``(..., dim)`` array laid out block by block.

    Inside a block the channel index is the slow axis, so a block reshapes to
    ``(..., mul, 2l+1)``.
    """

    irreps: Irreps
    array: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "irreps", Irreps(self.irreps))
        arr = np.asarray(self.array, dtype=np.float64)
        if arr.shape[-1] != self.irreps.dim:
            raise IrrepsError(f"array last axis {arr.shape[-1]} != irreps dim {self.irreps.dim}")
        if not np.isfinite(arr).all():
            raise IrrepsError("non-finite entries")
        object.__setattr__(self, "array", arr)

    def blocks(self) -> list[np.ndarray]:
        lead = self.array.shape[:-1]
        return [
            self.array[..., s].reshape(*lead, mul, ir.dim) for s, (mul, ir) in zip(self.irreps.slices(), self.irreps)
        ]

    @classmethod
    def from_blocks(cls, irreps, blocks: Sequence[np.ndarray]) -> "IrrepsTensor":
        irreps = Irreps(irreps)
        flat = [np.asarray(b).reshape(*np.shape(b)[:-2], -1) for b in blocks]
        return cls(irreps, np.concatenate(flat, axis=-1))

    @classmethod
    def zeros(cls, irreps, *lead: int) -> "IrrepsTensor":
        irreps = Irreps(irreps)
        return cls(irreps, np.zeros((*lead, irreps.dim)))


# --------------------------------------------------------------------------
# spherical harmonics
# --------------------------------------------------------------------------


def _legendre_reduced(l_max: int, z: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    """P_l^m(z) / (1 - z^2)^(m/2) without the Condon-Shortley phase."""
    P = {}
    for m in range(l_max + 1):
        pmm = np.full_like(z, float(math.prod(range(1, 2 * m, 2))) if m > 0 else 1.0)
        P[m, m] = pmm
        if m + 1 <= l_max:
            P[m + 1, m] = (2 * m + 1) * z * pmm
        for l in range(m + 2, l_max + 1):
            P[l, m] = ((2 * l - 1) * z * P[l - 1, m] - (l + m - 1) * P[l - 2, m]) / (l - m)
    return P


def real_spherical_harmonics(direction, l_max: int, check_unit: bool = True) -> list[np.ndarray]:
    """Real SH of unit vector(s) ``direction`` (shape ``(..., 3)``); one array per l."""
    u = np.asarray(direction, dtype=np.float64)
    if u.shape[-1] != 3:
        raise ValueError("direction must have a trailing axis of length 3")
    if l_max < 0:
        raise ValueError("l_max must be non-negative")
    if check_unit and np.any(np.abs(np.linalg.norm(u, axis=-1) - 1.0) > 1e-9):
        raise ValueError("direction must be a unit vector (within 1e-9)")
    x, y, z = u[..., 0], u[..., 1], u[..., 2]
    P = _legendre_reduced(l_max, z)
    xy = [np.ones_like(x) + 0j]
    for m in range(1, l_max + 1):
        xy.append(xy[-1] * (x + 1j * y))
    out = []
    for l in range(l_max + 1):
        block = np.empty((*x.shape, 2 * l + 1))
        for m in range(0, l + 1):
            norm = math.sqrt((2 * l + 1) / (4 * math.pi) * math.factorial(l - m) / math.factorial(l + m))
            if m == 0:
                block[..., l] = norm * P[l, 0]
            else:
                block[..., l + m] = math.sqrt(2) * norm * P[l, m] * xy[m].real
                block[..., l - m] = math.sqrt(2) * norm * P[l, m] * xy[m].imag
        out.append(block)
    return out


# --------------------------------------------------------------------------
# Clebsch-Gordan
# --------------------------------------------------------------------------


def complex_cg(j1: int, m1: int, j2: int, m2: int, j3: int, m3: int) -> float:
    """<j1 m1 j2 m2 | j3 m3> by the Racah formula (integer spins)."""
    if m3 != m1 + m2 or not abs(j1 - j2) <= j3 <= j1 + j2:
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0.0
    f = math.factorial
    pre = (2 * j3 + 1) * f(j3 + j1 - j2) * f(j3 - j1 + j2) * f(j1 + j2 - j3) / f(j1 + j2 + j3 + 1)
    pre *= f(j3 + m3) * f(j3 - m3) * f(j1 - m1) * f(j1 + m1) * f(j2 - m2) * f(j2 + m2)
    total = 0.0
    for k in range(0, j1 + j2 - j3 + 1):
        terms = (k, j1 + j2 - j3 - k, j1 - m1 - k, j2 + m2 - k, j3 - j2 + m1 + k, j3 - j1 - m2 + k)
        if min(terms) < 0:
            continue
        total += (-1) ** k / math.prod(f(t) for t in terms)
    return math.sqrt(pre) * total


@lru_cache(maxsize=None)
def real_to_complex_basis(l: int) -> np.ndarray:
    """Unitary ``Q`` with ``Y_real = Q @ Y_complex`` (rows m = -l..l, cols mu = -l..l)."""
    Q = np.zeros((2 * l + 1, 2 * l + 1), dtype=np.complex128)
    s = 1 / math.sqrt(2)
    for m in range(-l, l + 1):
        r = m + l
        if m > 0:
            Q[r, -m + l] = s
            Q[r, m + l] = (-1) ** m * s
        elif m < 0:
            Q[r, m + l] = 1j * s
            Q[r, -m + l] = -1j * (-1) ** m * s
        else:
            Q[r, l] = 1.0
    Q.setflags(write=False)
    return Q


@lru_cache(maxsize=None)
def cg_coefficient(l1: int, l2: int, l3: int) -> np.ndarray:
    """Real-basis coupling tensor of shape ``(2l1+1, 2l2+1, 2l3+1)``.

    Zero when the triangle inequality fails.  For fixed ``m3`` the slices are
    orthonormal: ``sum_{m1,m2} C[..., m3] C[..., m3'] = delta``.
    """
    shape = (2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1)
    if not abs(l1 - l2) <= l3 <= l1 + l2:
        out = np.zeros(shape)
        out.setflags(write=False)
        return out
    C = np.zeros(shape)
    for a, m1 in enumerate(range(-l1, l1 + 1)):
        for b, m2 in enumerate(range(-l2, l2 + 1)):
            m3 = m1 + m2
            if abs(m3) <= l3:
                C[a, b, m3 + l3] = complex_cg(l1, m1, l2, m2, l3, m3)
    Q1, Q2, Q3 = real_to_complex_basis(l1), real_to_complex_basis(l2), real_to_complex_basis(l3)
    R = np.einsum("ai,bj,ck,ijk->abc", Q1.conj(), Q2.conj(), Q3, C)
    if np.abs(R.imag).max() > np.abs(R.real).max():
        R = R * -1j
    if np.abs(R.imag).max() > 1e-12:
        raise AssertionError(f"real CG({l1},{l2},{l3}) is not real")
    out = np.ascontiguousarray(R.real)
    out[np.abs(out) < 1e-15] = 0.0
    out.setflags(write=False)
    return out


def sh_recursion_factor(l: int) -> float:
    """``K`` with ``sum C(l,1,l+1) Y_l Y_1 = K * Y_{l+1}`` for real SH."""
    return math.sqrt(3 * (2 * l + 1) / (4 * math.pi * (2 * l + 3))) * complex_cg(l, 0, 1, 0, l + 1, 0)


def dump_cg_tables(path, l_max: int = 2) -> None:
    table = {
        f"{l1},{l2},{l3}": cg_coefficient(l1, l2, l3).tolist()
        for l1 in range(l_max + 1)
        for l2 in range(l_max + 1)
        for l3 in range(abs(l1 - l2), min(l1 + l2, l_max) + 1)
    }
    with open(path, "w") as fh:
        json.dump(table, fh)


# --------------------------------------------------------------------------
# Wigner-D
# --------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _real_generators(l: int) -> np.ndarray:
    """Real antisymmetric generators for rotations about x, y, z.

    The harmonics are evaluated as functions, so the generators are the
    complex conjugates of the usual angular momentum matrices:
    ``A_k = -i Q (-J_k^*) Q^dagger``.
    """
    mu = np.arange(-l, l + 1)
    jp = np.zeros((2 * l + 1, 2 * l + 1))
    for k, m in enumerate(mu[:-1]):
        jp[k + 1, k] = math.sqrt(l * (l + 1) - m * (m + 1))
    jm = jp.T
    J = [-(jp + jm) / 2, (jp - jm) / 2j, -np.diag(mu).astype(np.complex128)]
    Q = real_to_complex_basis(l)
    out = []
    for Jk in J:
        A = -1j * (Q @ Jk @ Q.conj().T)
        assert np.abs(A.imag).max() < 1e-12
        out.append(A.real)
    gens = np.stack(out)
    gens.setflags(write=False)
    return gens


def check_rotation(R, proper: bool = True, tol: float = 1e-9) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.isfinite(R).all():
        raise ValueError("rotation must be a finite 3x3 matrix")
    if np.abs(R @ R.T - np.eye(3)).max() > tol:
        raise ValueError("matrix is not orthogonal")
    det = np.linalg.det(R)
    if proper and abs(det - 1.0) > tol:
        raise ValueError("matrix is not a proper rotation (det != +1)")
    return R


def wigner_d(l: int, R) -> np.ndarray:
    """Orthogonal ``(2l+1, 2l+1)`` representation matrix of a proper rotation."""
    R = check_rotation(R)
    if l == 0:
        return np.ones((1, 1))
    rotvec = Rotation.from_matrix(R).as_rotvec()
    A = np.einsum("k,kij->ij", rotvec, _real_generators(l))
    return scipy.linalg.expm(A)


def rotate_irreps_tensor(x: IrrepsTensor, R) -> IrrepsTensor:
    """Act with an O(3) element on every block (parity sign for improper ``R``)."""
    R = check_rotation(R, proper=False)
    improper = np.linalg.det(R) < 0
    proper_R = -R if improper else R
    blocks = []
    for block, (mul, ir) in zip(x.blocks(), x.irreps):
        D = wigner_d(ir.l, proper_R)
        if improper and ir.p == -1:
            D = -D
        blocks.append(block @ D.T)
    return IrrepsTensor.from_blocks(x.irreps, blocks)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform proper rotation from a normalised Gaussian quaternion."""
    q = rng.normal(size=4)
    return Rotation.from_quat(q / np.linalg.norm(q)).as_matrix()
