import numpy as np
import pytest

from se3set.checks import (
    BatterySizes,
    cg_equivariance,
    cg_orthogonality,
    faulty_sh,
    force_gradient,
    fragmentation_permutation,
    model_symmetry,
    run_battery,
    sh_normalization,
    sh_rotation,
)
from se3set.model import ModelConfig, SE3Set

from test_model import SMALL

TINY = BatterySizes(sh_cases=30, cg_cases=2, dtp_cases=3, fragment_molecules=4, permutations=2, model_molecules=2, gradient_molecules=1)


def rng(k=0):
    return np.random.default_rng(k)


def test_irreps_checks_pass():
    assert sh_normalization().passed
    assert sh_rotation(rng(), 50).passed
    assert cg_orthogonality().passed
    assert cg_equivariance(rng(1), 3).passed


def test_faulty_sh_caught_only_by_normalisation():
    # a uniform rescale of each l block is still equivariant, so only the normalisation check can see it
    assert not sh_normalization(sh=faulty_sh).passed
    assert sh_rotation(rng(), 50, sh=faulty_sh).passed


def test_fragmentation_and_model_checks():
    assert fragmentation_permutation(rng(2), 5, 2).passed
    model = SE3Set(ModelConfig(**SMALL), seed=1)
    e, f = model_symmetry(rng(3), 2, (5, 8), model=model)
    assert e.passed and f.passed
    g = force_gradient(rng(4), 1, model=model)
    assert g.passed and g.cases == 1


def test_force_gradient_detects_wrong_step():
    # a step so large that central differences are no longer a derivative
    model = SE3Set(ModelConfig(**SMALL), seed=1)
    assert not force_gradient(rng(4), 1, h=0.3, model=model).passed


def test_battery_layout_stable():
    good = run_battery(0, TINY, ModelConfig(**SMALL))
    bad = run_battery(0, TINY, ModelConfig(**SMALL), break_sh_normalization=True)
    assert good["passed"] and not bad["passed"]
    assert [p["name"] for p in good["properties"]] == [p["name"] for p in bad["properties"]]
    assert set(good) == set(bad)
    assert run_battery(0, TINY, ModelConfig(**SMALL)) == good


def test_battery_sizes_validation():
    with pytest.raises(ValueError):
        BatterySizes.from_dict({"sh": 3})
    with pytest.raises(ValueError):
        BatterySizes.from_dict({"sh_cases": 0})
