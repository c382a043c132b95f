import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from se3set.chem import Atom, Bond, make_molecule
from se3set.equi import RadialBasisSpec
from se3set.fragment import FragmentationConfig, Hypergraph, build_hypergraph
from se3set.model import ModelConfig, ModelError, SE3Set, energy_force_loss, make_batch, predict_energy_forces
from se3set.o3 import random_rotation

from molecules import ethanol, methyl_glycolate, water

SMALL = dict(
    node_irreps="4x0e+2x1o+2x2e",
    hyperedge_irreps="4x0e+2x1o+2x2e",
    head_irreps="2x0e+1x1o+1x2e",
    ffn_irreps="8x0e+4x1o+2x2e",
    output_irreps="8x0e",
    blocks=1,
    heads=2,
    dtp_mul=2,
    radial=RadialBasisSpec("gaussian", 8, 8.0),
    radial_hidden=16,
)


def small_model(variant="tensor_product", mode="explicit", seed=0):
    return SE3Set(ModelConfig(e2v_variant=variant, overlap_mode=mode, **SMALL), seed=seed)


def hg_for(mol, mode="explicit"):
    return build_hypergraph(mol, None, FragmentationConfig(overlap_mode=mode, r_c=4.0))


VARIANTS = [(v, m) for v in ("tensor_product", "summation") for m in ("explicit", "implicit")]


def test_embedding_shapes_and_degree():
    model = small_model()
    mol = ethanol()
    batch = make_batch([(mol, hg_for(mol))])
    x, h = model.embed(batch)
    assert x.numpy().shape == (mol.n_atoms, model.cfg.node_irreps.dim)
    assert h.numpy().shape == (batch.n_incidences, model.cfg.hyperedge_irreps.dim)
    assert not x.numpy()[:, 4:].any()  # only scalars are embedded
    expected = model.emb_z.data[mol.numbers] + model.emb_deg.data[batch.degree]
    np.testing.assert_array_equal(x.numpy()[:, :4], expected)


@pytest.mark.parametrize("variant,mode", VARIANTS)
def test_rigid_motion_and_permutation(variant, mode):
    model = small_model(variant, mode, seed=3)
    rng = np.random.default_rng(4)
    mol = methyl_glycolate()
    hg = hg_for(mol, mode)
    E0, F0 = predict_energy_forces(model, mol, hg)
    R, t = random_rotation(rng), rng.normal(size=3) * 4
    E1, F1 = model.energy_and_forces(make_batch([(mol, hg)], [mol.positions @ R.T + t]))
    assert abs(E1[0] - E0) / (1 + abs(E0)) < 1e-10
    np.testing.assert_allclose(F1, F0 @ R.T, atol=1e-9)
    perm = [int(k) for k in rng.permutation(mol.n_atoms)]
    pm = mol.permuted(perm)
    E2, F2 = predict_energy_forces(model, pm, hg_for(pm, mode))
    assert abs(E2 - E0) < 1e-10 * (1 + abs(E0))
    np.testing.assert_allclose(F2, F0[perm], atol=1e-9)


def test_hyperedge_order_irrelevant():
    model = small_model()
    mol = ethanol()
    hg = hg_for(mol)
    rev = Hypergraph(n=hg.n, mode=hg.mode, hyperedges=hg.hyperedges[::-1], cores=hg.cores[::-1], config=hg.config)
    E0, _ = predict_energy_forces(model, mol, hg)
    E1, _ = predict_energy_forces(model, mol, rev)
    assert E0 == pytest.approx(E1, abs=1e-12)


def test_zero_readout_gives_bias():
    model = small_model()
    model.out_w.data[:] = 0.0
    model.out_b.data[:] = 0.37
    mol = ethanol()
    E, F = predict_energy_forces(model, mol, hg_for(mol))
    assert E == pytest.approx(0.37, abs=1e-15)
    assert not F.any()


def test_shift_and_scale():
    model = small_model()
    mol = water()
    hg = hg_for(mol)
    raw, _ = predict_energy_forces(model, mol, hg)
    model.energy_scale = 2.0
    model.energy_shift[1], model.energy_shift[8] = -0.5, -10.0
    E, _ = predict_energy_forces(model, mol, hg)
    assert E == pytest.approx(2 * raw - 11.0, rel=1e-13)


def test_size_extensive_for_separated_copies():
    model = small_model()
    mol = water()
    far = make_molecule(
        [Atom(a.atomic_number, tuple(a.position)) for a in mol.atoms]
        + [Atom(a.atomic_number, tuple(np.asarray(a.position) + [50.0, 0, 0])) for a in mol.atoms],
        [Bond(b.i, b.j) for b in mol.bonds] + [Bond(b.i + 3, b.j + 3) for b in mol.bonds],
    )
    E1, F1 = predict_energy_forces(model, mol, hg_for(mol))
    E2, F2 = predict_energy_forces(model, far, hg_for(far))
    b = float(model.out_b.data[0])
    assert E2 - b == pytest.approx(2 * (E1 - b), rel=1e-10)
    np.testing.assert_allclose(F2, np.vstack([F1, F1]), atol=1e-12)


def test_batch_equals_individual():
    model = small_model()
    mols = [water(), ethanol(), methyl_glycolate()]
    E, F = model.energy_and_forces(make_batch([(m, hg_for(m)) for m in mols]))
    start = 0
    for k, m in enumerate(mols):
        e, f = predict_energy_forces(model, m, hg_for(m))
        assert E[k] == pytest.approx(e, abs=1e-12)
        np.testing.assert_allclose(F[start : start + m.n_atoms], f, atol=1e-12)
        start += m.n_atoms


def test_loss_example():
    F_true = np.zeros((2, 3))
    assert energy_force_loss([1.0, 3.0], [0.0, 0.0], F_true + 0.5, F_true) == pytest.approx(52.0)
    assert energy_force_loss([1.0], [0.0], lambda_f=0.0) == 1.0
    with pytest.raises(ValueError):
        energy_force_loss([1.0], [0.0])
    with pytest.raises(ValueError):
        energy_force_loss([1.0, 2.0], [0.0])


@pytest.mark.parametrize(
    "bad",
    [
        dict(blocks=0),
        dict(heads=3),
        dict(e2v_variant="mean"),
        dict(overlap_mode="both"),
        dict(dropout=1.0),
        dict(output_irreps="2x1o"),
        dict(node_irreps="4x0e+2x1o+2x3e", hyperedge_irreps="4x0e+2x1o+2x3e", head_irreps="2x0e+1x1o+1x3e"),
        dict(node_irreps="2x0e+2x0e+2x1o+2x2e"),
    ],
)
def test_config_validation(bad):
    with pytest.raises(ModelError):
        ModelConfig(**{**SMALL, **bad})


def test_config_round_trip():
    cfg = ModelConfig(**SMALL)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_batch_mode_errors():
    mol = ethanol()
    with pytest.raises(ModelError):
        make_batch([(mol, hg_for(mol)), (mol, hg_for(mol, "implicit"))])
    with pytest.raises(ModelError):
        small_model("tensor_product", "explicit").energy(make_batch([(mol, hg_for(mol, "implicit"))]))
    with pytest.raises(ModelError):
        make_batch([(water(), hg_for(mol))])


def test_single_edge_attention():
    # methane-like fragment: one hyperedge, so every attention weight is exactly one
    from molecules import methane

    mol = methane()
    hg = hg_for(mol)
    assert hg.m == 1
    E, F = predict_energy_forces(small_model(), mol, hg)
    assert np.isfinite(E) and np.abs(F.sum(axis=0)).max() < 1e-12


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_net_force_vanishes(seed):
    rng = np.random.default_rng(seed)
    mol = methyl_glycolate()
    pos = mol.positions @ random_rotation(rng).T
    hg = hg_for(mol)
    _, F = small_model(seed=seed % 7).energy_and_forces(make_batch([(mol, hg)], [pos]))
    assert np.abs(F.sum(axis=0)).max() < 1e-10
