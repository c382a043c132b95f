"""Synthetic molecules and surrogate labels.

Molecules are random trees over a small element palette with valence caps,
laid out with bond lengths near the covalent-radius sum and a minimum
separation between all atoms.  Labels come from an all-pairs Morse surrogate

    E = sum_{i<j} D [(1 - exp(-a (r_ij - r0_ij)))^2 - 1],   r0_ij = R_i + R_j

which has a closed-form gradient, so forces are exact.  Energies are in
arbitrary surrogate units (``D = 1``), distances in Angstrom.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .chem import ATOMIC_NUMBERS, COVALENT_RADII, Atom, Bond, Molecule, make_molecule, molecule_from_dict

VALENCE = {1: 1, 6: 4, 7: 3, 8: 2, 9: 1, 16: 2, 17: 1}
MORSE_DEPTH = 1.0
MORSE_WIDTH = 2.0  # 1/Angstrom
MIN_SEPARATION = 0.9
ENERGY_UNIT = "surrogate energy unit"


class DatasetError(ValueError):
    pass


@dataclass
class DatasetRecord:
    molecule: Molecule
    energy: float
    forces: np.ndarray | None = None

    def __post_init__(self):
        if self.forces is not None:
            self.forces = np.asarray(self.forces, dtype=np.float64)
            if self.forces.shape != (self.molecule.n_atoms, 3):
                raise DatasetError(f"forces must have shape ({self.molecule.n_atoms}, 3), got {self.forces.shape}")

    def to_dict(self) -> dict:
        out = {"molecule": self.molecule.to_dict(), "energy": self.energy}
        if self.forces is not None:
            out["forces"] = self.forces.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetRecord":
        unknown = set(data) - {"molecule", "energy", "forces"}
        if unknown:
            raise DatasetError(f"unknown record fields {sorted(unknown)}")
        if "molecule" not in data or "energy" not in data:
            raise DatasetError("record needs 'molecule' and 'energy'")
        return cls(molecule_from_dict(data["molecule"]), float(data["energy"]), data.get("forces"))


# --------------------------------------------------------------------------
# surrogate potential
# --------------------------------------------------------------------------


def surrogate_energy_forces(numbers: np.ndarray, positions: np.ndarray) -> tuple[float, np.ndarray]:
    """All-pairs Morse energy and its exact forces ``-dE/dr``."""
    pos = np.asarray(positions, dtype=np.float64)
    radii = np.array([COVALENT_RADII[int(z)] for z in numbers])
    iu, ju = np.triu_indices(len(pos), k=1)
    diff = pos[iu] - pos[ju]
    r = np.linalg.norm(diff, axis=1)
    r0 = radii[iu] + radii[ju]
    e = np.exp(-MORSE_WIDTH * (r - r0))
    energy = float(np.sum(MORSE_DEPTH * ((1.0 - e) ** 2 - 1.0)))
    dEdr = 2.0 * MORSE_DEPTH * MORSE_WIDTH * (1.0 - e) * e
    g = (dEdr / r)[:, None] * diff
    forces = np.zeros_like(pos)
    np.add.at(forces, iu, -g)
    np.add.at(forces, ju, g)
    return energy, forces


def label(mol: Molecule) -> DatasetRecord:
    E, F = surrogate_energy_forces(mol.numbers, mol.positions)
    return DatasetRecord(mol, E, F)


# --------------------------------------------------------------------------
# random molecules
# --------------------------------------------------------------------------


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _ring_scaffold(rng: np.random.Generator, size: int, heavy: Sequence[int]):
    """Planar regular ring of heavy atoms in a random orientation."""
    numbers = [int(rng.choice(heavy)) for _ in range(size)]
    side = np.mean([COVALENT_RADII[a] + COVALENT_RADII[b] for a, b in zip(numbers, numbers[1:] + numbers[:1])])
    radius = side / (2.0 * np.sin(np.pi / size))
    angles = 2.0 * np.pi * np.arange(size) / size
    ring = radius * np.stack([np.cos(angles), np.sin(angles), np.zeros(size)], axis=1)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    pos = [p for p in ring @ q.T]
    bonds = [(k, (k + 1) % size) for k in range(size)]
    return numbers, pos, bonds


def random_molecule(
    rng: np.random.Generator,
    n_atoms: int,
    palette: Sequence[str] = ("C", "N", "O", "H"),
    weights: Sequence[float] | None = None,
    jitter: float = 0.05,
    name: str | None = None,
    max_tries: int = 200,
    ring_size: int | None = None,
) -> Molecule:
    """Random single-bonded molecule of exactly ``n_atoms`` atoms.

    A tree, or with ``ring_size`` a planar ring of heavy atoms with tree
    branches grown from its free valences.
    """
    zs = [ATOMIC_NUMBERS[s] for s in palette]
    for z in zs:
        if z not in VALENCE:
            raise DatasetError(f"no valence cap for element {z}")
    heavy = [z for z in zs if VALENCE[z] > 1]
    if n_atoms > 1 and not heavy:
        raise DatasetError("palette needs an element of valence > 1 to grow a tree")
    if ring_size is not None and not 3 <= ring_size <= n_atoms:
        raise DatasetError(f"ring size {ring_size} does not fit {n_atoms} atoms")
    p = None if weights is None else np.asarray(weights, float) / np.sum(weights)
    for _ in range(max_tries):
        if ring_size is None:
            numbers = [int(rng.choice(heavy)) if n_atoms > 1 else int(rng.choice(zs))]
            pos = [np.zeros(3)]
            bonds = []
        else:
            numbers, pos, bonds = _ring_scaffold(rng, ring_size, heavy)
        free = [VALENCE[z] - sum(k in b for b in bonds) for k, z in enumerate(numbers)]
        ok = True
        for k in range(len(numbers), n_atoms):
            open_sites = [i for i, f in enumerate(free) if f > 0]
            if not open_sites:
                ok = False
                break
            remaining = n_atoms - k
            total_free = sum(free)
            z = int(rng.choice(zs, p=p))
            # keep the tree growable: a monovalent atom may not close the last open site early
            if VALENCE[z] == 1 and total_free == 1 and remaining > 1:
                z = int(rng.choice(heavy))
            parent = int(rng.choice(open_sites))
            d0 = COVALENT_RADII[z] + COVALENT_RADII[numbers[parent]]
            placed = None
            for _ in range(50):
                cand = pos[parent] + d0 * (1.0 + jitter * rng.standard_normal()) * _random_unit(rng)
                if min(np.linalg.norm(cand - q) for q in pos) >= MIN_SEPARATION:
                    placed = cand
                    break
            if placed is None:
                ok = False
                break
            numbers.append(z)
            pos.append(placed)
            free[parent] -= 1
            free.append(VALENCE[z] - 1)
            bonds.append((parent, k))
        if ok:
            atoms = [Atom(z, tuple(float(c) for c in q)) for z, q in zip(numbers, pos)]
            return make_molecule(atoms, [Bond(i, j, 1.0) for i, j in bonds], name)
    raise DatasetError(f"could not place a {n_atoms}-atom molecule after {max_tries} tries")


def synth_dataset(
    count: int,
    seed: int,
    size_range: tuple[int, int] = (3, 7),
    palette: Sequence[str] = ("C", "N", "O", "H"),
    weights: Sequence[float] | None = (3, 1, 1, 4),
    jitter: float = 0.05,
    ring_fraction: float = 0.0,
) -> list[DatasetRecord]:
    """``count`` labelled random molecules; identical for identical arguments.

    With ``ring_fraction > 0`` that share of molecules with at least five atoms
    is built around a 5- or 6-membered ring.
    """
    lo, hi = size_range
    if count < 0 or lo < 1 or hi < lo:
        raise DatasetError("invalid count or size range")
    if not 0.0 <= ring_fraction <= 1.0:
        raise DatasetError("ring_fraction must lie in [0, 1]")
    rng = np.random.Generator(np.random.Philox(seed))
    out = []
    for k in range(count):
        n = int(rng.integers(lo, hi + 1))
        ring = None
        if ring_fraction > 0 and n >= 5 and rng.random() < ring_fraction:
            ring = int(rng.integers(5, min(6, n) + 1))
        out.append(label(random_molecule(rng, n, palette, weights, jitter, name=f"synth-{k:05d}", ring_size=ring)))
    return out


# --------------------------------------------------------------------------
# dataset files
# --------------------------------------------------------------------------


def write_dataset(records: Sequence[DatasetRecord], directory: str | os.PathLike, meta: dict | None = None) -> Path:
    """One JSON file per record plus ``manifest.json`` listing them in order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k, rec in enumerate(records):
        fname = f"{k:05d}.json"
        (directory / fname).write_text(json.dumps(rec.to_dict(), indent=1, sort_keys=True))
        files.append(fname)
    manifest = {"count": len(records), "files": files, "energy_unit": ENERGY_UNIT, "length_unit": "angstrom"}
    manifest.update(meta or {})
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return directory


def dataset_files(directory: str | os.PathLike) -> list[Path]:
    """Record files in manifest order, or sorted ``*.json`` when there is no manifest."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory} is not a directory")
    manifest = directory / "manifest.json"
    if manifest.exists():
        return [directory / f for f in json.loads(manifest.read_text())["files"]]
    return sorted(p for p in directory.glob("*.json") if p.name != "manifest.json")


def read_record(path: str | os.PathLike) -> DatasetRecord | Molecule:
    """A labelled record, or a bare molecule when the file has no energy."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict) and "molecule" in data:
        return DatasetRecord.from_dict(data)
    return molecule_from_dict(data)


def load_dataset(directory: str | os.PathLike) -> list[DatasetRecord]:
    out = []
    for path in dataset_files(directory):
        rec = read_record(path)
        if not isinstance(rec, DatasetRecord):
            raise DatasetError(f"{path} has no energy label")
        out.append(rec)
    return out
