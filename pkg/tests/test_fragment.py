import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import fragment_oracle
import molecules
from molecules import benzene, bromine_chloride, ethane, ethanol, ethene, methane, methyl_glycolate, water
from se3set.chem import Atom, Bond, make_molecule
from se3set.fragment import (
    Fragment,
    FragmentationConfig,
    Hypergraph,
    Substructure,
    bfs_substructures,
    build_hypergraph,
    cleavable_bonds,
    expand_explicit,
    fragment_bond_order,
    fragment_molecule,
    hypergraph_signature,
    merge_substructures,
    neighbor_fragments,
    pair_kernel,
)
from se3set.o3 import random_rotation
from se3set.patterns import find_functional_groups, find_rings, load_patterns
from se3set.synth import random_molecule

GOLDEN = json.loads((Path(__file__).parent / "data" / "golden_fragments.json").read_text())
PATTERNS = load_patterns()
BUILDERS = {"ethanol": molecules.ethanol, "methyl_glycolate": molecules.methyl_glycolate}


def _bond_ids(mol, pairs):
    lookup = {b.key: k for k, b in enumerate(mol.bonds)}
    return {lookup[(min(i, j), max(i, j))] for i, j in pairs}


def _steps(mol):
    rings = find_rings(mol)
    groups = find_functional_groups(mol, PATTERNS, rings)
    cleav = cleavable_bonds(mol, groups, rings)
    return groups, rings, cleav, bfs_substructures(mol, cleav, groups, rings)


def random_mol(seed, n, ring=False):
    rng = np.random.default_rng(seed)
    return random_molecule(rng, n, ring_size=min(6, n) if ring and n >= 5 else None)


# --- step 1 / 2 ---------------------------------------------------------


def test_cleavable_examples():
    assert _steps(ethane())[2] == _bond_ids(ethane(), [(0, 1)])
    assert _steps(ethene())[2] == set()
    mol = ethanol()
    groups, _, cleav, _ = _steps(mol)
    assert groups == [frozenset({2, 8})]
    assert cleav == _bond_ids(mol, [(0, 1), (1, 2)])


def test_bfs_examples():
    (s,) = _steps(methane())[3]
    assert s.atoms == frozenset(range(5))
    subs = _steps(ethanol())[3]
    assert [sorted(s.atoms) for s in subs] == [[0, 3, 4, 5], [1, 6, 7], [2, 8]]
    assert [s.kind for s in subs] == ["singleton", "singleton", "functional-group"]
    (ring,) = _steps(benzene())[3]
    assert len(ring.atoms) == 12 and ring.kind == "ring"


def test_substructures_connected_and_partition():
    mol = methyl_glycolate()
    subs = _steps(mol)[3]
    seen = sorted(i for s in subs for i in s.atoms)
    assert seen == list(range(mol.n_atoms))
    import networkx as nx

    g = nx.Graph((b.i, b.j) for b in mol.bonds)
    for s in subs:
        assert len(s.atoms) == 1 or nx.is_connected(g.subgraph(s.atoms))


# --- bond order ----------------------------------------------------------


def test_pair_kernel_values():
    for method in ("lendvay", "exponential"):
        assert pair_kernel(np.array(1.3), np.array(1.3), method) == 1.0
    assert pair_kernel(np.array(1.0625), np.array(1.0), "lendvay") == pytest.approx(math.exp(-1.0), rel=1e-14)
    assert pair_kernel(np.array(1.0 + math.log(2)), np.array(1.0), "exponential") == pytest.approx(0.5, rel=1e-14)


def test_fragment_bond_order_at_equilibrium():
    mol = make_molecule([Atom(6, (0, 0, 0)), Atom(6, (1.52, 0, 0))], [Bond(0, 1)])
    for method in ("lendvay", "exponential"):
        assert fragment_bond_order(mol, {0}, {1}, method) == pytest.approx(1.0, abs=1e-15)


def test_fragment_bond_order_matches_pair_sum_and_is_symmetric():
    mol = methyl_glycolate()
    A, B = {0, 6, 1}, {2, 3, 4, 5}
    for method in ("lendvay", "exponential"):
        w = fragment_bond_order(mol, A, B, method)
        assert w == pytest.approx(fragment_oracle.pair_sum(mol, A, B, method), rel=1e-13)
        assert w == fragment_bond_order(mol, B, A, method)
        assert w > 0


def test_fragment_bond_order_rejects_overlap():
    with pytest.raises(ValueError):
        fragment_bond_order(ethanol(), {0, 1}, {1, 2})
    with pytest.raises(ValueError):
        fragment_bond_order(ethanol(), set(), {1})


# --- step 3 --------------------------------------------------------------


def test_merge_noop_when_all_large_enough():
    mol = ethanol()
    subs = _steps(mol)[3]
    cores = merge_substructures(mol, subs, FragmentationConfig())
    assert [f.core for f in cores] == [s.atoms for s in subs]
    assert not any(f.isolated for f in cores)


def test_merge_two_bonded_singletons():
    mol = bromine_chloride()
    subs = _steps(mol)[3]
    assert [len(s.atoms) for s in subs] == [1, 1]
    (f,) = merge_substructures(mol, subs, FragmentationConfig(n_min=2))
    assert f.core == frozenset({0, 1})


def test_lone_atom_isolated():
    mol = make_molecule([Atom(6, (0, 0, 0)), Atom(8, (6.0, 0, 0))], [])
    subs = [Substructure(frozenset({0}), "singleton"), Substructure(frozenset({1}), "singleton")]
    out = merge_substructures(mol, subs, FragmentationConfig(n_min=2, c_is=0.1))
    assert [f.core for f in out] == [frozenset({0}), frozenset({1})]
    assert all(f.isolated for f in out)


def test_nonbonded_fallback_merges_on_bond_order():
    # two singletons at bonding distance but without a bond record: W >= c_is path
    mol = make_molecule([Atom(6, (0, 0, 0)), Atom(8, (1.42, 0, 0))], [])
    subs = [Substructure(frozenset({0}), "singleton"), Substructure(frozenset({1}), "singleton")]
    (f,) = merge_substructures(mol, subs, FragmentationConfig(n_min=2, c_is=0.1))
    assert f.core == frozenset({0, 1}) and not f.isolated


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(3, 18), st.booleans(), st.integers(2, 4), st.integers(0, 4))
def test_merge_respects_n_max(seed, n, ring, n_min, extra):
    mol = random_mol(seed, n, ring)
    cfg = FragmentationConfig(n_min=n_min, n_max=n_min + extra)
    subs = _steps(mol)[3]
    cores = merge_substructures(mol, subs, cfg)
    biggest_sub = max(len(s.atoms) for s in subs)
    for f in cores:
        assert len(f.core) <= max(cfg.n_max, biggest_sub)
        assert len(f.core) >= cfg.n_min or f.isolated or len(f.core) == mol.n_atoms
    assert sorted(i for f in cores for i in f.core) == list(range(mol.n_atoms))


# --- step 4 / 4* ---------------------------------------------------------


def _cores(mol, cfg=FragmentationConfig()):
    subs = _steps(mol)[3]
    return subs, merge_substructures(mol, subs, cfg)


def test_expand_infinite_threshold_is_identity():
    mol = methyl_glycolate()
    subs, cores = _cores(mol)
    out = expand_explicit(mol, cores, subs, FragmentationConfig(c_w=math.inf))
    assert all(f.expanded == f.core for f in out)


def test_expand_tiny_threshold_absorbs_all():
    mol = methyl_glycolate()
    subs, cores = _cores(mol)
    out = expand_explicit(mol, cores, subs, FragmentationConfig(c_w=1e-300))
    assert all(f.expanded == frozenset(range(mol.n_atoms)) for f in out)


def test_ethanol_methyl_absorbs_methylene():
    mol = ethanol()
    subs, cores = _cores(mol)
    w = fragment_oracle.pair_sum(mol, {0, 3, 4, 5}, {1, 6, 7}, "lendvay")
    assert w >= 0.1
    out = expand_explicit(mol, cores, subs, FragmentationConfig())
    assert out[0].expanded >= {1, 6, 7}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(4, 16), st.floats(0.01, 2.0), st.floats(0.0, 1.0))
def test_lower_cw_never_shrinks(seed, n, hi, frac):
    mol = random_mol(seed, n)
    subs, cores = _cores(mol)
    a = expand_explicit(mol, cores, subs, FragmentationConfig(c_w=hi))
    b = expand_explicit(mol, cores, subs, FragmentationConfig(c_w=hi * frac + 1e-6))
    assert all(fa.expanded <= fb.expanded for fa, fb in zip(a, b))


def test_neighbor_fragments_limits():
    mol = methyl_glycolate()
    _, cores = _cores(mol)
    assert all(v == () for v in neighbor_fragments(mol, cores, 1e-3).values())
    everything = tuple(range(len(cores)))
    assert all(v == everything for v in neighbor_fragments(mol, cores, math.inf).values())


def test_neighbor_fragments_water_brute_force():
    mol = water()
    cores = [Fragment(frozenset({0, 1}), frozenset({0, 1})), Fragment(frozenset({2}), frozenset({2}))]
    got = neighbor_fragments(mol, cores, 1.0)
    pos = mol.positions
    for i in range(3):
        nbrs = {j for j in range(3) if j != i and np.linalg.norm(pos[i] - pos[j]) <= 1.0}
        want = tuple(a for a, f in enumerate(cores) if f.core & nbrs)
        assert got[i] == want
    # the oxygen's own fragment enters through its bonded hydrogen, H2 sees only O
    assert got[0] == (0, 1) and got[2] == (0,)


# --- full pipeline -------------------------------------------------------


def test_single_substructure_one_hyperedge():
    hg = build_hypergraph(methane())
    assert hg.m == 1 and hg.hyperedges[0] == tuple(range(5))


def test_ethanol_defaults_three_hyperedges():
    hg = build_hypergraph(ethanol())
    assert hg.m == 3
    assert len(set().union(*map(set, hg.hyperedges))) == 9


@pytest.mark.parametrize("case", GOLDEN["cases"], ids=lambda c: f"{c['molecule']}-{c['config']['bond_order_method']}-{c['config']['c_w']}")
def test_golden_files(case):
    mol = BUILDERS[case["molecule"]]()
    cfg = FragmentationConfig(**case["config"])
    trace = fragment_molecule(mol, PATTERNS, cfg)
    assert [sorted(g) for g in trace.groups] == case["functional_groups"]
    assert sorted(map(list, trace.hypergraph.cores)) == sorted(case["cores"])
    assert sorted(map(list, trace.hypergraph.hyperedges)) == sorted(case["hyperedges"])
    # the oracle still reproduces the frozen sets
    groups = [frozenset(g) for g in case["functional_groups"]]
    cores, edges, _ = fragment_oracle.explicit_hyperedges(mol, groups, cfg.n_min, cfg.c_w, cfg.bond_order_method)
    assert sorted(edges) == sorted(case["hyperedges"]) and sorted(cores) == sorted(case["cores"])


def test_permuted_ethanol():
    mol = ethanol()
    perm = [4, 8, 0, 2, 7, 1, 3, 6, 5]
    hg = build_hypergraph(mol)
    assert hypergraph_signature(build_hypergraph(mol.permuted(perm))) == hypergraph_signature(hg.relabeled(perm))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(5, 20), st.booleans(), st.sampled_from(["explicit", "implicit"]), st.randoms(use_true_random=False))
def test_permutation_invariance(seed, n, ring, mode, rnd):
    mol = random_mol(seed, n, ring)
    cfg = FragmentationConfig(overlap_mode=mode, r_c=2.0)
    perm = list(range(n))
    rnd.shuffle(perm)
    hg = build_hypergraph(mol, PATTERNS, cfg)
    assert hypergraph_signature(build_hypergraph(mol.permuted(perm), PATTERNS, cfg)) == hypergraph_signature(hg.relabeled(perm))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(5, 16), st.integers(0, 2**32 - 1))
def test_rigid_motion_invariance(seed, n, rot_seed):
    mol = random_mol(seed, n)
    rng = np.random.default_rng(rot_seed)
    R, t = random_rotation(rng), rng.normal(size=3) * 3
    moved = mol.with_positions(mol.positions @ R.T + t)
    for mode in ("explicit", "implicit"):
        cfg = FragmentationConfig(overlap_mode=mode, r_c=2.5)
        assert build_hypergraph(moved, PATTERNS, cfg).edge_sets() == build_hypergraph(mol, PATTERNS, cfg).edge_sets()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 20), st.booleans())
def test_explicit_covers_every_atom(seed, n, ring):
    mol = random_mol(seed, n, ring)
    hg = build_hypergraph(mol, PATTERNS)
    assert all(len(e) > 0 for e in hg.node_edges())
    assert all(set(c) <= set(e) for c, e in zip(hg.cores, hg.hyperedges))


def test_hypergraph_json_round_trip():
    for mode in ("explicit", "implicit"):
        hg = build_hypergraph(methyl_glycolate(), PATTERNS, FragmentationConfig(overlap_mode=mode, r_c=4.0))
        data = json.loads(hg.to_json())
        assert set(data) >= {"n", "mode", "hyperedges", "cores", "config"}
        assert ("neighbor_fragments" in data) == (mode == "implicit")
        again = Hypergraph.from_dict(data)
        assert again == hg and again.config == hg.config


def test_infinite_cw_serialises():
    cfg = FragmentationConfig(c_w=math.inf)
    assert Hypergraph.from_dict(build_hypergraph(ethanol(), None, cfg).to_dict()).config == cfg


@pytest.mark.parametrize(
    "kwargs",
    [dict(n_min=1), dict(n_min=5, n_max=4), dict(c_is=0.0), dict(c_w=0.0), dict(overlap_mode="implicit", r_c=0.0), dict(bond_order_method="x"), dict(overlap_mode="both")],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        FragmentationConfig(**kwargs)


def test_config_rejects_unknown_key():
    with pytest.raises(ValueError):
        FragmentationConfig.from_dict({"n_min": 2, "cutoff": 3})
