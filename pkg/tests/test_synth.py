import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from se3set.chem import COVALENT_RADII
from se3set.synth import (
    DatasetError,
    DatasetRecord,
    load_dataset,
    random_molecule,
    read_record,
    surrogate_energy_forces,
    synth_dataset,
    write_dataset,
)


def test_morse_dimer_minimum():
    r0 = COVALENT_RADII[6] + COVALENT_RADII[8]
    E, F = surrogate_energy_forces(np.array([6, 8]), np.array([[0, 0, 0], [r0, 0, 0.0]]))
    assert E == pytest.approx(-1.0, abs=1e-15)
    assert np.abs(F).max() < 1e-15


def test_morse_dimer_stretched():
    r0 = 2 * COVALENT_RADII[1]
    r = r0 + 0.3
    E, F = surrogate_energy_forces(np.array([1, 1]), np.array([[0, 0, 0], [r, 0, 0.0]]))
    e = np.exp(-2.0 * 0.3)
    assert E == pytest.approx((1 - e) ** 2 - 1, rel=1e-14)
    # stretched bond pulls the atoms together
    assert F[1, 0] == pytest.approx(-2 * 2.0 * (1 - e) * e, rel=1e-12)
    np.testing.assert_allclose(F[0], -F[1])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_surrogate_forces_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    mol = random_molecule(rng, int(rng.integers(2, 8)))
    z, x = mol.numbers, mol.positions
    _, F = surrogate_energy_forces(z, x)
    h = 1e-5
    fd = np.zeros_like(x)
    for i in range(x.shape[0]):
        for c in range(3):
            xp, xm = x.copy(), x.copy()
            xp[i, c] += h
            xm[i, c] -= h
            fd[i, c] = -(surrogate_energy_forces(z, xp)[0] - surrogate_energy_forces(z, xm)[0]) / (2 * h)
    np.testing.assert_allclose(F, fd, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 14), st.booleans())
def test_random_molecule_valid(seed, n, ring):
    rng = np.random.default_rng(seed)
    ring_size = int(rng.integers(5, 7)) if ring and n >= 6 else None
    mol = random_molecule(rng, n, ring_size=ring_size)
    assert mol.n_atoms == n
    assert len(mol.bonds) == n - 1 + (ring_size is not None)
    valence = {1: 1, 6: 4, 7: 3, 8: 2}
    deg = np.zeros(n, int)
    for b in mol.bonds:
        deg[b.i] += 1
        deg[b.j] += 1
    assert all(deg[k] <= valence[int(z)] for k, z in enumerate(mol.numbers))
    if n > 1:
        d = np.linalg.norm(mol.positions[:, None] - mol.positions[None], axis=-1)
        assert d[~np.eye(n, dtype=bool)].min() >= 0.9


def test_dataset_deterministic():
    a, b = synth_dataset(5, 3), synth_dataset(5, 3)
    assert [r.energy for r in a] == [r.energy for r in b]
    assert [r.energy for r in a] != [r.energy for r in synth_dataset(5, 4)]
    assert all(3 <= r.molecule.n_atoms <= 7 for r in a)


def test_dataset_errors():
    for args in [dict(count=-1, seed=0), dict(count=1, seed=0, size_range=(4, 3)), dict(count=1, seed=0, ring_fraction=2.0)]:
        with pytest.raises(DatasetError):
            synth_dataset(**args)
    with pytest.raises(DatasetError):
        random_molecule(np.random.default_rng(0), 3, palette=("H",))
    with pytest.raises(DatasetError):
        random_molecule(np.random.default_rng(0), 3, ring_size=5)


def test_files_round_trip(tmp_path):
    recs = synth_dataset(4, 9, ring_fraction=1.0, size_range=(6, 8))
    write_dataset(recs, tmp_path / "d", meta={"seed": 9})
    back = load_dataset(tmp_path / "d")
    assert [r.energy for r in back] == [r.energy for r in recs]
    for r, s in zip(recs, back):
        np.testing.assert_array_equal(r.forces, s.forces)
        np.testing.assert_array_equal(r.molecule.positions, s.molecule.positions)
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["count"] == 4 and manifest["seed"] == 9


def test_record_validation(tmp_path):
    rec = synth_dataset(1, 0)[0]
    with pytest.raises(DatasetError):
        DatasetRecord(rec.molecule, 0.0, np.zeros((1, 3)))
    with pytest.raises(DatasetError):
        DatasetRecord.from_dict({**rec.to_dict(), "charge": 0})
    with pytest.raises(DatasetError):
        DatasetRecord.from_dict({"energy": 1.0})
    p = tmp_path / "bare.json"
    p.write_text(json.dumps(rec.molecule.to_dict()))
    assert not isinstance(read_record(p), DatasetRecord)
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing")
