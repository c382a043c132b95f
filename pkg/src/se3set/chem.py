"""Molecule data model, bond-order matrix, covalent radii and geometry helpers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

# Single-bond covalent radii in Angstrom (Cordero et al., Dalton Trans. 2008).
# Carbon uses the sp3 value.
COVALENT_RADII: dict[int, float] = {
    1: 0.31, 2: 0.28,
    3: 1.28, 4: 0.96, 5: 0.84, 6: 0.76, 7: 0.71, 8: 0.66, 9: 0.57, 10: 0.58,
    11: 1.66, 12: 1.41, 13: 1.21, 14: 1.11, 15: 1.07, 16: 1.05, 17: 1.02, 18: 1.06,
    19: 2.03, 20: 1.76, 32: 1.20, 33: 1.19, 34: 1.20, 35: 1.20, 36: 1.16,
    53: 1.39, 54: 1.40,
}

SYMBOLS: dict[int, str] = {
    1: "H", 2: "He", 3: "Li", 4: "Be", 5: "B", 6: "C", 7: "N", 8: "O", 9: "F",
    10: "Ne", 11: "Na", 12: "Mg", 13: "Al", 14: "Si", 15: "P", 16: "S", 17: "Cl",
    18: "Ar", 19: "K", 20: "Ca", 32: "Ge", 33: "As", 34: "Se", 35: "Br", 36: "Kr",
    53: "I", 54: "Xe",
}
ATOMIC_NUMBERS: dict[str, int] = {s: z for z, s in SYMBOLS.items()}

BOND_ORDERS = (1.0, 1.5, 2.0, 3.0)
MIN_PAIR_DISTANCE = 0.1


class MoleculeError(ValueError):
    """Base class for invalid molecule input."""


class MalformedMoleculeError(MoleculeError):
    pass


class BondIndexError(MoleculeError):
    pass


class DuplicateBondError(MoleculeError):
    pass


class UnsupportedElementError(MoleculeError):
    pass


class DegenerateGeometryError(MoleculeError):
    pass


@dataclass(frozen=True)
class Atom:
    atomic_number: int
    position: tuple[float, float, float]
    formal_charge: int = 0
    explicit_h_count: int = 0

    @property
    def symbol(self) -> str:
        return SYMBOLS.get(self.atomic_number, f"#{self.atomic_number}")


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    order: float = 1.0

    @property
    def key(self) -> tuple[int, int]:
        return (min(self.i, self.j), max(self.i, self.j))


@dataclass(frozen=True)
class Molecule:
    """Immutable molecule with explicit hydrogens.

    Construct through :func:`make_molecule` or :func:`parse_molecule` so the
    invariants (valid indices, unique bonds, supported elements, non-degenerate
    geometry) are checked and ``explicit_h_count`` is filled in.
    """

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    name: str | None = None
    _adjacency: tuple[tuple[int, ...], ...] = field(default=(), repr=False, compare=False)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def numbers(self) -> np.ndarray:
        return np.array([a.atomic_number for a in self.atoms], dtype=np.int64)

    @property
    def positions(self) -> np.ndarray:
        return np.array([a.position for a in self.atoms], dtype=np.float64).reshape(-1, 3)

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._adjacency[i]

    def degree(self, i: int) -> int:
        return len(self._adjacency[i])

    def is_hydrogen(self, i: int) -> bool:
        return self.atoms[i].atomic_number == 1

    def bond_lookup(self) -> dict[tuple[int, int], Bond]:
        return {b.key: b for b in self.bonds}

    def with_positions(self, positions: np.ndarray) -> "Molecule":
        positions = np.asarray(positions, dtype=np.float64)
        atoms = [
            Atom(a.atomic_number, tuple(float(v) for v in p), a.formal_charge)
            for a, p in zip(self.atoms, positions)
        ]
        return make_molecule(atoms, self.bonds, self.name)

    def permuted(self, perm: Iterable[int]) -> "Molecule":
        """Relabel atoms so that new atom ``k`` is old atom ``perm[k]``."""
        perm = list(perm)
        inverse = {old: new for new, old in enumerate(perm)}
        atoms = [self.atoms[old] for old in perm]
        atoms = [Atom(a.atomic_number, a.position, a.formal_charge) for a in atoms]
        bonds = [Bond(inverse[b.i], inverse[b.j], b.order) for b in self.bonds]
        return make_molecule(atoms, bonds, self.name)

    def to_dict(self) -> dict:
        out: dict = {
            "atoms": [
                {"z": a.atomic_number, "pos": list(a.position), "charge": a.formal_charge}
                for a in self.atoms
            ],
            "bonds": [{"i": b.i, "j": b.j, "order": b.order} for b in self.bonds],
        }
        if self.name is not None:
            out["name"] = self.name
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def make_molecule(atoms: Iterable[Atom], bonds: Iterable[Bond], name: str | None = None) -> Molecule:
    atoms = list(atoms)
    bonds = list(bonds)
    n = len(atoms)
    for a in atoms:
        if a.atomic_number < 1 or a.atomic_number not in COVALENT_RADII:
            raise UnsupportedElementError(f"unsupported element z={a.atomic_number}")
        if len(a.position) != 3 or not all(math.isfinite(v) for v in a.position):
            raise MalformedMoleculeError(f"atom position must be 3 finite numbers, got {a.position!r}")
    seen: set[tuple[int, int]] = set()
    adjacency: list[list[int]] = [[] for _ in range(n)]
    for b in bonds:
        if not (0 <= b.i < n and 0 <= b.j < n):
            raise BondIndexError(f"bond ({b.i}, {b.j}) references an atom outside 0..{n - 1}")
        if b.i == b.j:
            raise MalformedMoleculeError(f"self-bond on atom {b.i}")
        if b.order not in BOND_ORDERS:
            raise MalformedMoleculeError(f"bond order {b.order} not in {BOND_ORDERS}")
        if b.key in seen:
            raise DuplicateBondError(f"duplicate bond between atoms {b.key[0]} and {b.key[1]}")
        seen.add(b.key)
        adjacency[b.i].append(b.j)
        adjacency[b.j].append(b.i)
    if n > 1:
        pos = np.array([a.position for a in atoms], dtype=np.float64)
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        d[np.diag_indices(n)] = np.inf
        k = np.unravel_index(np.argmin(d), d.shape)
        if d[k] < MIN_PAIR_DISTANCE:
            raise DegenerateGeometryError(
                f"atoms {k[0]} and {k[1]} are {d[k]:.3g} A apart (minimum {MIN_PAIR_DISTANCE} A)"
            )
    final_atoms = tuple(
        Atom(
            a.atomic_number,
            tuple(float(v) for v in a.position),
            int(a.formal_charge),
            sum(1 for j in adjacency[idx] if atoms[j].atomic_number == 1),
        )
        for idx, a in enumerate(atoms)
    )
    return Molecule(
        atoms=final_atoms,
        bonds=tuple(Bond(int(b.i), int(b.j), float(b.order)) for b in bonds),
        name=name,
        _adjacency=tuple(tuple(sorted(a)) for a in adjacency),
    )


def _check_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise MalformedMoleculeError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise MalformedMoleculeError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise MalformedMoleculeError(f"{where}: missing field(s) {sorted(missing)}")


def molecule_from_dict(data: dict) -> Molecule:
    _check_keys(data, {"atoms", "bonds", "name"}, {"atoms", "bonds"}, "molecule")
    if not isinstance(data["atoms"], list) or not isinstance(data["bonds"], list):
        raise MalformedMoleculeError("'atoms' and 'bonds' must be arrays")
    atoms = []
    for k, a in enumerate(data["atoms"]):
        _check_keys(a, {"z", "pos", "charge"}, {"z", "pos"}, f"atoms[{k}]")
        z, pos, charge = a["z"], a["pos"], a.get("charge", 0)
        if isinstance(z, bool) or not isinstance(z, int):
            raise MalformedMoleculeError(f"atoms[{k}].z must be an integer")
        if isinstance(charge, bool) or not isinstance(charge, int):
            raise MalformedMoleculeError(f"atoms[{k}].charge must be an integer")
        if (
            not isinstance(pos, list)
            or len(pos) != 3
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in pos)
        ):
            raise MalformedMoleculeError(f"atoms[{k}].pos must be [x, y, z]")
        atoms.append(Atom(z, tuple(float(v) for v in pos), charge))
    bonds = []
    for k, b in enumerate(data["bonds"]):
        _check_keys(b, {"i", "j", "order"}, {"i", "j", "order"}, f"bonds[{k}]")
        i, j, order = b["i"], b["j"], b["order"]
        if any(isinstance(v, bool) or not isinstance(v, int) for v in (i, j)):
            raise MalformedMoleculeError(f"bonds[{k}]: indices must be integers")
        if isinstance(order, bool) or not isinstance(order, (int, float)):
            raise MalformedMoleculeError(f"bonds[{k}].order must be a number")
        bonds.append(Bond(i, j, float(order)))
    name = data.get("name")
    if name is not None and not isinstance(name, str):
        raise MalformedMoleculeError("'name' must be a string")
    return make_molecule(atoms, bonds, name)


def parse_molecule(text: str | bytes) -> Molecule:
    """Parse the molecule JSON format.

    ``{"atoms": [{"z", "pos", "charge"?}], "bonds": [{"i", "j", "order"}], "name"?}``
    with hydrogens given explicitly and positions in Angstrom.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedMoleculeError(f"input is not UTF-8: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedMoleculeError(f"invalid JSON: {exc}") from None
    return molecule_from_dict(data)


def bond_order_matrix(mol: Molecule) -> np.ndarray:
    n = mol.n_atoms
    B = np.zeros((n, n))
    for b in mol.bonds:
        B[b.i, b.j] = B[b.j, b.i] = b.order
    return B


def covalent_radius(z: int) -> float:
    try:
        return COVALENT_RADII[z]
    except KeyError:
        raise UnsupportedElementError(f"no covalent radius for z={z}") from None


def equilibrium_distance(z_i: int, z_j: int) -> float:
    """Equilibrium bond length estimate: sum of the two covalent radii."""
    return covalent_radius(z_i) + covalent_radius(z_j)


def distance_matrix(mol: Molecule) -> np.ndarray:
    pos = mol.positions
    return np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)


def neighbors_within(mol: Molecule, i: int, r_c: float) -> set[int]:
    """Atoms ``j != i`` with ``|r_i - r_j| <= r_c``.  ``r_c`` may be ``math.inf``."""
    if not 0 <= i < mol.n_atoms:
        raise IndexError(f"atom index {i} out of range for {mol.n_atoms} atoms")
    if not r_c > 0:
        raise ValueError("r_c must be positive")
    pos = mol.positions
    d = np.linalg.norm(pos - pos[i], axis=1)
    return {j for j in range(mol.n_atoms) if j != i and d[j] <= r_c}
