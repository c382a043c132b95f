"""Property battery: symmetry and consistency checks run from a single seed.

Every check returns a :class:`PropertyResult` with the largest error seen and
the tolerance it is judged against.  :func:`run_battery` runs them all and
builds a report whose layout does not depend on the outcome, so reports from
different runs can be diffed field by field.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .equi import depthwise_tensor_product, dtp_paths
from .fragment import FragmentationConfig, build_hypergraph, hypergraph_signature
from .model import ModelConfig, SE3Set, make_batch
from .o3 import IrrepsTensor, Irreps, cg_coefficient, random_rotation, real_spherical_harmonics, rotate_irreps_tensor, wigner_d
from .synth import random_molecule

REPORT_SCHEMA = "se3set.check/1"

SHFunction = Callable[[np.ndarray, int], list]


@dataclass
class PropertyResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    cases: int
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _result(name: str, err: float, tol: float, cases: int, note: str = "", strict_zero: bool = False) -> PropertyResult:
    ok = bool(err == 0.0) if strict_zero else bool(np.isfinite(err) and err < tol)
    return PropertyResult(name, ok, float(err), tol, cases, note)


def faulty_sh(direction: np.ndarray, l_max: int) -> list:
    """Real SH with the normalisation of every l > 0 block off by ``1 + l/10`` (fault injection)."""
    return [Y * (1.0 + 0.1 * l) for l, Y in enumerate(real_spherical_harmonics(direction, l_max))]


def _rng(seed: int, stream: int) -> np.random.Generator:
    # one independent counter-based stream per property, all derived from the run seed
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, stream]))


# --------------------------------------------------------------------------
# irreps math
# --------------------------------------------------------------------------


def sh_normalization(l_max: int = 4, sh: SHFunction = real_spherical_harmonics) -> PropertyResult:
    """Orthonormality of the real SH on the sphere by product Gauss quadrature."""
    n_theta, n_phi = l_max + 2, 2 * l_max + 3
    z, wz = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    s = np.sqrt(1 - zz**2)
    dirs = np.stack([s * np.cos(pp), s * np.sin(pp), zz], axis=-1).reshape(-1, 3)
    w = (wz[:, None] * np.full(n_phi, 2 * np.pi / n_phi)[None, :]).reshape(-1)
    Y = np.concatenate(sh(dirs, l_max), axis=1)
    gram = np.einsum("k,ka,kb->ab", w, Y, Y)
    err = float(np.abs(gram - np.eye(len(gram))).max())
    return _result("sh_normalization", err, 1e-10, Y.shape[1])


def sh_rotation(rng: np.random.Generator, cases: int = 1000, l_max: int = 4, sh: SHFunction = real_spherical_harmonics) -> PropertyResult:
    """``Y(R r) = D(R) Y(r)`` for random unit vectors and rotations."""
    err = 0.0
    for _ in range(cases):
        r = rng.normal(size=3)
        r /= np.linalg.norm(r)
        R = random_rotation(rng)
        lhs, rhs = sh(R @ r, l_max), sh(r, l_max)
        for l in range(l_max + 1):
            err = max(err, float(np.abs(lhs[l] - wigner_d(l, R) @ rhs[l]).max()))
    return _result("sh_rotation", err, 1e-9, cases)


def cg_orthogonality(l_max: int = 2) -> PropertyResult:
    """``sum_{m1 m2} C^{l3}_{m1 m2 m3} C^{l3'}_{m1 m2 m3'} = delta`` over all admissible triples."""
    err, count = 0.0, 0
    for l1 in range(l_max + 1):
        for l2 in range(l_max + 1):
            blocks = [cg_coefficient(l1, l2, l3).reshape(-1, 2 * l3 + 1) for l3 in range(abs(l1 - l2), l1 + l2 + 1)]
            M = np.concatenate(blocks, axis=1)
            err = max(err, float(np.abs(M.T @ M - np.eye(M.shape[1])).max()))
            count += 1
    return _result("cg_orthogonality", err, 1e-12, count)


def cg_equivariance(rng: np.random.Generator, cases: int = 20, l_max: int = 2) -> PropertyResult:
    """The coupling tensors intertwine Wigner-D: ``C (D1 x D2) = D3 C``."""
    err = 0.0
    for _ in range(cases):
        R = random_rotation(rng)
        D = [wigner_d(l, R) for l in range(2 * l_max + 1)]
        for l1 in range(l_max + 1):
            for l2 in range(l_max + 1):
                for l3 in range(abs(l1 - l2), min(l1 + l2, l_max) + 1):
                    C = cg_coefficient(l1, l2, l3)
                    lhs = np.einsum("abc,ai,bj->ijc", C, D[l1], D[l2])
                    rhs = np.einsum("ijk,ck->ijc", C, D[l3])
                    err = max(err, float(np.abs(lhs - rhs).max()))
    return _result("cg_equivariance", err, 1e-12, cases)


DTP_IRREPS = (Irreps("3x0e+3x1o+3x2e"), Irreps("3x0e+3x1o+3x2e"), Irreps("3x0e+3x1o+3x2e"))


def _random_irreps(rng: np.random.Generator, irreps: Irreps, n: int) -> IrrepsTensor:
    return IrrepsTensor(irreps, rng.normal(size=(n, irreps.dim)))


def dtp_equivariance(rng: np.random.Generator, cases: int = 50, irreps=DTP_IRREPS) -> PropertyResult:
    """``DTP(D x, D y) = D DTP(x, y)`` under random rotations and inversion."""
    ix, iy, iout = irreps
    n_paths = len(dtp_paths(ix, iy, iout))
    err = 0.0
    for k in range(cases):
        x = _random_irreps(rng, ix, 4)
        y = _random_irreps(rng, iy, 4)
        w = rng.normal(size=n_paths)
        R = random_rotation(rng)
        if k % 2:
            R = -R
        lhs = depthwise_tensor_product(rotate_irreps_tensor(x, R), rotate_irreps_tensor(y, R), w, iout).array
        rhs = rotate_irreps_tensor(depthwise_tensor_product(x, y, w, iout), R).array
        err = max(err, float(np.abs(lhs - rhs).max()))
    return _result("dtp_equivariance", err, 1e-9, cases)


def dtp_bilinearity(rng: np.random.Generator, cases: int = 50, irreps=DTP_IRREPS) -> PropertyResult:
    """Linearity in each argument: ``DTP(a x1 + b x2, y) = a DTP(x1, y) + b DTP(x2, y)`` and likewise in ``y``.

    Scalars are powers of two so the identity holds to rounding of the sums only.
    """
    ix, iy, iout = irreps
    n_paths = len(dtp_paths(ix, iy, iout))
    err = 0.0
    for _ in range(cases):
        x1, x2 = _random_irreps(rng, ix, 3), _random_irreps(rng, ix, 3)
        y1, y2 = _random_irreps(rng, iy, 3), _random_irreps(rng, iy, 3)
        w = rng.normal(size=n_paths)
        a, b = 2.0 ** rng.integers(-3, 4), -(2.0 ** rng.integers(-3, 4))
        f = lambda x, y: depthwise_tensor_product(x, y, w, iout).array
        mix = lambda p, q: IrrepsTensor(p.irreps, a * p.array + b * q.array)
        e1 = f(mix(x1, x2), y1) - (a * f(x1, y1) + b * f(x2, y1))
        e2 = f(x1, mix(y1, y2)) - (a * f(x1, y1) + b * f(x1, y2))
        scale = max(1.0, float(np.abs(f(x1, y1)).max()))
        err = max(err, float(np.abs(e1).max()) / scale, float(np.abs(e2).max()) / scale)
    return _result("dtp_bilinearity", err, 1e-12, cases)


# --------------------------------------------------------------------------
# fragmentation
# --------------------------------------------------------------------------


def random_molecules(
    rng: np.random.Generator,
    count: int,
    size_range: tuple[int, int] = (5, 20),
    ring_fraction: float = 0.3,
    palette: Sequence[str] = ("C", "N", "O", "H"),
) -> list:
    out = []
    lo, hi = size_range
    for k in range(count):
        n = int(rng.integers(lo, hi + 1))
        ring = int(rng.integers(5, min(6, n) + 1)) if n >= 5 and rng.random() < ring_fraction else None
        out.append(random_molecule(rng, n, palette, (3, 1, 1, 4), name=f"check-{k:03d}", ring_size=ring))
    return out


def fragmentation_permutation(
    rng: np.random.Generator,
    molecules: int = 100,
    permutations: int = 5,
    cfg: FragmentationConfig | None = None,
    patterns=None,
) -> PropertyResult:
    """Hypergraph of a permuted molecule equals the relabelled hypergraph, as sets of sets."""
    mismatches, total = 0, 0
    for mol in random_molecules(rng, molecules):
        hg = build_hypergraph(mol, patterns, cfg)
        for _ in range(permutations):
            perm = [int(k) for k in rng.permutation(mol.n_atoms)]
            hp = build_hypergraph(mol.permuted(perm), patterns, cfg)
            total += 1
            if hypergraph_signature(hp) != hypergraph_signature(hg.relabeled(perm)):
                mismatches += 1
    frac = mismatches / total if total else 0.0
    return _result("fragmentation_permutation", frac, 0.0, total, f"{mismatches} mismatching cases", strict_zero=True)


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------


def model_symmetry(
    rng: np.random.Generator,
    molecules: int = 50,
    size_range: tuple[int, int] = (5, 20),
    model: SE3Set | None = None,
    frag: FragmentationConfig | None = None,
) -> tuple[PropertyResult, PropertyResult]:
    """Energy invariance and force equivariance under random rigid motions.

    Energy error is ``|dE| / (1 + |E|)``; force error is the componentwise
    ``|F(R x + t) - F(x) R^T|``.
    """
    model = model or SE3Set(ModelConfig(), seed=int(rng.integers(2**31)))
    frag = frag or FragmentationConfig(overlap_mode=model.cfg.overlap_mode)
    e_err = f_err = 0.0
    mols = random_molecules(rng, molecules, size_range)
    for mol in mols:
        hg = build_hypergraph(mol, None, frag)
        R = random_rotation(rng)
        t = rng.normal(scale=5.0, size=3)
        E0, F0 = model.energy_and_forces(make_batch([(mol, hg)]))
        E1, F1 = model.energy_and_forces(make_batch([(mol, hg)], [mol.positions @ R.T + t]))
        e_err = max(e_err, float(abs(E1[0] - E0[0]) / (1 + abs(E0[0]))))
        f_err = max(f_err, float(np.abs(F1 - F0 @ R.T).max()))
    return (
        _result("energy_invariance", e_err, 1e-8, len(mols)),
        _result("force_equivariance", f_err, 1e-7, len(mols)),
    )


def force_gradient(
    rng: np.random.Generator,
    molecules: int = 10,
    n_atoms: int = 5,
    h: float = 1e-4,
    model: SE3Set | None = None,
    frag: FragmentationConfig | None = None,
    max_draws: int | None = None,
) -> PropertyResult:
    """Autodiff position gradient of the energy against central differences with step ``h``.

    The energy has leaky-ReLU kinks, and a central difference across one is
    not a derivative.  A draw whose tape saw a leaky-ReLU input within ``h`` of
    zero is therefore reported and replaced by a fresh molecule, until
    ``molecules`` kink-free comparisons have been made.
    """
    model = model or SE3Set(ModelConfig(), seed=int(rng.integers(2**31)))
    frag = frag or FragmentationConfig(overlap_mode=model.cfg.overlap_mode)
    max_draws = max_draws or 10 * molecules
    err, checked, rejected, rejected_err = 0.0, 0, 0, 0.0
    while checked < molecules and checked + rejected < max_draws:
        (mol,) = random_molecules(rng, 1, (n_atoms, n_atoms), ring_fraction=0.0)
        batch = make_batch([(mol, build_hypergraph(mol, None, frag))])
        res = ag.grad_check(lambda pos: ag.tsum(model.raw_energy(pos, batch)), [batch.positions], h)
        if res.kink_flagged:
            rejected += 1
            rejected_err = max(rejected_err, res.max_rel_error)
            continue
        err = max(err, res.max_rel_error)
        checked += 1
    if checked < molecules:
        err = float("inf")
    note = f"{rejected} draws replaced (leaky-ReLU input within h of zero; max error there {rejected_err:.1e})"
    return _result("force_gradient", err, 1e-5, checked, note)


# --------------------------------------------------------------------------
# battery
# --------------------------------------------------------------------------


@dataclass
class BatterySizes:
    sh_cases: int = 1000
    cg_cases: int = 20
    dtp_cases: int = 50
    fragment_molecules: int = 100
    permutations: int = 5
    model_molecules: int = 50
    gradient_molecules: int = 10

    @classmethod
    def from_dict(cls, data: dict) -> "BatterySizes":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown check option(s): {sorted(unknown)}")
        out = cls(**data)
        if any(v < 1 for v in asdict(out).values()):
            raise ValueError("check sizes must be positive")
        return out


def run_battery(
    seed: int = 0,
    sizes: BatterySizes | None = None,
    model_cfg: ModelConfig | None = None,
    frag: FragmentationConfig | None = None,
    patterns=None,
    break_sh_normalization: bool = False,
    log: Callable[[str], None] | None = None,
) -> dict:
    """All properties, one report dict; ``passed`` is the conjunction of the individual verdicts."""
    sizes = sizes or BatterySizes()
    model_cfg = model_cfg or ModelConfig()
    sh = faulty_sh if break_sh_normalization else real_spherical_harmonics
    model = SE3Set(model_cfg, seed=seed)
    frag = frag or FragmentationConfig(overlap_mode=model_cfg.overlap_mode)
    results: list[PropertyResult] = []

    def add(*rs: PropertyResult) -> None:
        for r in rs:
            results.append(r)
            if log:
                log(f"{r.name}: {'pass' if r.passed else 'FAIL'} (max error {r.max_error:.3e}, tolerance {r.tolerance:.0e})")

    add(sh_normalization(sh=sh))
    add(sh_rotation(_rng(seed, 1), sizes.sh_cases, sh=sh))
    add(cg_orthogonality())
    add(cg_equivariance(_rng(seed, 2), sizes.cg_cases))
    add(dtp_equivariance(_rng(seed, 3), sizes.dtp_cases))
    add(dtp_bilinearity(_rng(seed, 4), sizes.dtp_cases))
    add(fragmentation_permutation(_rng(seed, 5), sizes.fragment_molecules, sizes.permutations, frag, patterns))
    add(*model_symmetry(_rng(seed, 6), sizes.model_molecules, model=model, frag=frag))
    add(force_gradient(_rng(seed, 7), sizes.gradient_molecules, model=model, frag=frag))
    return {
        "schema": REPORT_SCHEMA,
        "seed": seed,
        "fault_injection": {"break_sh_normalization": break_sh_normalization},
        "passed": all(r.passed for r in results),
        "properties": [r.to_dict() for r in results],
    }
