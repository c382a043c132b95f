"""Acceptance gate: one test per headline criterion, each printing a pass/fail line."""

import json
import time
from pathlib import Path

import numpy as np
import pytest

import molecules
from se3set.checks import (
    _rng,
    cg_orthogonality,
    dtp_bilinearity,
    dtp_equivariance,
    force_gradient,
    fragmentation_permutation,
    model_symmetry,
    sh_rotation,
)
from se3set.checkpoint import load_checkpoint, save_checkpoint
from se3set.fragment import FragmentationConfig, build_hypergraph, fragment_molecule
from se3set.model import ModelConfig, SE3Set, make_batch
from se3set.synth import synth_dataset
from se3set.train import Example, TrainConfig, train

GOLDEN = json.loads((Path(__file__).parent / "data" / "golden_fragments.json").read_text())
SEED = 2024


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail, t0):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title}: {detail} ({time.perf_counter() - t0:.1f} s)")

    return emit


@pytest.fixture(scope="module")
def symmetry():
    t0 = time.perf_counter()
    e, f = model_symmetry(_rng(SEED, 6), 50, (5, 20), model=SE3Set(ModelConfig(), seed=SEED))
    return e, f, time.perf_counter() - t0


def test_criterion_1_energy_invariance(symmetry, report):
    e, _, dt = symmetry
    t0 = time.perf_counter() - dt
    ok = e.passed and e.cases == 50 and dt < 60
    report(1, "energy SE(3) invariance", ok, f"max |dE|/(1+|E|) = {e.max_error:.2e} < 1e-8 over {e.cases} molecules", t0)
    assert ok


def test_criterion_2_force_equivariance(symmetry, report):
    _, f, dt = symmetry
    t0 = time.perf_counter() - dt
    ok = f.passed and f.cases == 50 and dt < 120
    report(2, "force equivariance", ok, f"max |F(Rx) - F(x)R^T| = {f.max_error:.2e} < 1e-7", t0)
    assert ok


def test_criterion_3_force_gradient(report):
    t0 = time.perf_counter()
    res = force_gradient(_rng(SEED, 7), 10, 5, h=1e-4, model=SE3Set(ModelConfig(), seed=SEED))
    ok = res.passed and res.cases == 10 and time.perf_counter() - t0 < 120
    report(3, "autodiff forces vs central differences", ok, f"max rel error = {res.max_error:.2e} < 1e-5; {res.note}", t0)
    assert ok


def test_criterion_4_fragmentation_permutation(report):
    t0 = time.perf_counter()
    res = fragmentation_permutation(_rng(SEED, 5), 100, 5)
    ok = res.passed and res.cases == 500 and time.perf_counter() - t0 < 30
    report(4, "fragmentation permutation invariance", ok, f"{res.cases} cases, {res.note}", t0)
    assert ok


def test_criterion_5_golden_fragments(report):
    t0 = time.perf_counter()
    builders = {"ethanol": molecules.ethanol, "methyl_glycolate": molecules.methyl_glycolate}
    bad = []
    for case in GOLDEN["cases"]:
        hg = fragment_molecule(builders[case["molecule"]](), None, FragmentationConfig(**case["config"])).hypergraph
        if sorted(map(list, hg.hyperedges)) != sorted(case["hyperedges"]) or sorted(map(list, hg.cores)) != sorted(case["cores"]):
            bad.append(f"{case['molecule']}/{case['config']['bond_order_method']}/c_w={case['config']['c_w']}")
    ok = not bad and len(GOLDEN["cases"]) == 6
    report(5, "golden hyperedge sets", ok, f"{len(GOLDEN['cases']) - len(bad)}/{len(GOLDEN['cases'])} cases exact", t0)
    assert ok


def test_criterion_6_irreps_math(report):
    t0 = time.perf_counter()
    rs = [sh_rotation(_rng(SEED, 1), 1000), cg_orthogonality(), dtp_equivariance(_rng(SEED, 3), 50), dtp_bilinearity(_rng(SEED, 4), 50)]
    tol = {"sh_rotation": 1e-9, "cg_orthogonality": 1e-12, "dtp_equivariance": 1e-9, "dtp_bilinearity": 1e-12}
    ok = all(r.passed and r.tolerance <= tol[r.name] for r in rs) and time.perf_counter() - t0 < 30
    report(6, "irreps math", ok, ", ".join(f"{r.name} {r.max_error:.1e}" for r in rs), t0)
    assert ok


def test_criterion_7_toy_training(report):
    t0 = time.perf_counter()
    records = synth_dataset(200, 11, (3, 7))
    examples = [Example(r, build_hypergraph(r.molecule)) for r in records]
    rows, tp_wins, all_train = [], 0, True
    for seed in range(5):
        final = {}
        for variant in ("tensor_product", "summation"):
            model = SE3Set(ModelConfig(e2v_variant=variant), seed=seed)
            res = train(model, examples, TrainConfig(steps=200, batch_size=32, lr=3e-3, warmup_steps=10, seed=seed, eval_every=0))
            ratio = res.final_loss / res.initial_loss
            all_train &= ratio <= 0.5
            final[variant] = res.final_loss
            rows.append(f"s{seed} {variant[:3]} {ratio:.2f}")
        tp_wins += final["tensor_product"] <= final["summation"]
    elapsed = time.perf_counter() - t0
    ok = all_train and tp_wins >= 3 and elapsed < 600
    report(7, "toy training", ok, f"final/initial loss [{'; '.join(rows)}]; tensor product <= summation in {tp_wins}/5 seeds", t0)
    assert ok


def test_criterion_8_overlap_modes(report):
    t0 = time.perf_counter()
    corpus = [getattr(molecules, name)() for name in (
        "water", "methane", "ethane", "ethene", "ethanol", "methyl_glycolate", "hydrazine",
        "benzene", "naphthalene", "bromine_chloride", "two_hydroxyl_chain",
    )]
    corpus += [r.molecule for r in synth_dataset(100, 8, (3, 16), ring_fraction=0.3)]
    failures = []
    for r_c in (4.0, 5.0, 6.0):
        for mol in corpus:
            hx = build_hypergraph(mol, None, FragmentationConfig(overlap_mode="explicit", r_c=r_c))
            hi = build_hypergraph(mol, None, FragmentationConfig(overlap_mode="implicit", r_c=r_c))
            if {i for e in hx.hyperedges for i in e} != set(range(mol.n_atoms)):
                failures.append(("explicit", mol.name))
            if any(len(hi.neighbor_fragments.get(i, ())) == 0 for i in range(mol.n_atoms)):
                failures.append(("implicit", mol.name, r_c))
            make_batch([(mol, hx)])
            make_batch([(mol, hi)])
    ok = not failures
    report(8, "explicit vs implicit overlap", ok, f"{len(corpus)} molecules x r_c 4/5/6 A, {len(failures)} failures", t0)
    assert ok


def test_criterion_9_checkpoint_round_trip(tmp_path, report):
    t0 = time.perf_counter()
    mols = [r.molecule for r in synth_dataset(20, 13, (5, 12))]
    model = SE3Set(ModelConfig(), seed=SEED)
    model.energy_shift[[1, 6, 7, 8]] = [-0.6, -37.8, -54.6, -75.1]
    model.energy_scale = 0.31
    batch = make_batch([(m, build_hypergraph(m)) for m in mols])
    E0 = model.energy(batch)
    save_checkpoint(tmp_path / "model.se3s", model)
    back, _, _ = load_checkpoint(tmp_path / "model.se3s", ModelConfig())
    E1 = back.energy(batch)
    ok = E0.tobytes() == E1.tobytes() and len(E0) == 20
    report(9, "checkpoint round trip", ok, f"{len(E0)} energies, bit-identical = {E0.tobytes() == E1.tobytes()}", t0)
    assert ok
