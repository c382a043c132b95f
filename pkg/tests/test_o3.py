import json
import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings, strategies as st
from sympy import S
from sympy.physics.quantum.cg import CG

from se3set.checks import cg_equivariance, cg_orthogonality, sh_normalization, sh_rotation
from se3set.o3 import (
    Irreps,
    IrrepsError,
    IrrepsTensor,
    cg_coefficient,
    complex_cg,
    dump_cg_tables,
    random_rotation,
    real_spherical_harmonics,
    rotate_irreps_tensor,
    wigner_d,
)


def unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def scipy_real_sh(u, l):
    """Real SH from scipy's complex harmonics, Condon-Shortley phase removed."""
    theta = np.arccos(np.clip(u[:, 2], -1, 1))
    phi = np.arctan2(u[:, 1], u[:, 0])
    out = np.zeros((len(u), 2 * l + 1))
    for m in range(-l, l + 1):
        Y = scipy.special.sph_harm_y(l, abs(m), theta, phi)
        sign = (-1) ** abs(m)
        if m > 0:
            out[:, l + m] = math.sqrt(2) * sign * Y.real
        elif m < 0:
            out[:, l + m] = math.sqrt(2) * sign * Y.imag
        else:
            out[:, l] = Y.real
    return out


quaternions = st.tuples(*[st.floats(-1, 1)] * 4).filter(lambda q: sum(x * x for x in q) > 1e-3)


def quat_matrix(q):
    from scipy.spatial.transform import Rotation

    q = np.array(q) / np.linalg.norm(q)
    return Rotation.from_quat(q).as_matrix()


# --- irreps --------------------------------------------------------------


def test_irreps_parse_and_dim():
    ir = Irreps("16x0e+8x1o+4x2e")
    assert ir.dim == 16 + 24 + 20
    assert ir.lmax == 2
    assert str(ir) == "16x0e+8x1o+4x2e"
    assert Irreps([(128, 0, "e"), (64, 1, "o"), (32, 2, "e")]).dim == 128 + 192 + 160


@pytest.mark.parametrize("bad", ["3x1q", "0x0e", "x1e"])
def test_irreps_parse_errors(bad):
    with pytest.raises(IrrepsError):
        Irreps(bad)


def test_irreps_tensor_invariants():
    with pytest.raises(IrrepsError):
        IrrepsTensor("2x1o", np.zeros(5))
    with pytest.raises(IrrepsError):
        IrrepsTensor("1x0e", np.array([np.nan]))
    x = IrrepsTensor("2x0e+1x1o", np.arange(5.0))
    assert [b.shape for b in x.blocks()] == [(2, 1), (1, 3)]


# --- spherical harmonics -------------------------------------------------


def test_sh_closed_forms():
    Y = real_spherical_harmonics(np.array([0.0, 0.0, 1.0]), 1)
    assert Y[0][0] == pytest.approx(1 / (2 * math.sqrt(math.pi)), abs=1e-15)
    assert Y[0][0] == pytest.approx(0.2820948, abs=1e-7)
    assert Y[1][1] == pytest.approx(math.sqrt(3 / (4 * math.pi)), abs=1e-15)
    assert Y[1][1] == pytest.approx(0.4886025, abs=1e-7)
    assert Y[1][0] == Y[1][2] == 0.0


def test_sh_against_scipy():
    u = unit_vectors(np.random.default_rng(0), 200)
    ours = real_spherical_harmonics(u, 4)
    for l in range(5):
        np.testing.assert_allclose(ours[l], scipy_real_sh(u, l), atol=1e-12)


def test_sh_orthonormal_by_quadrature():
    assert sh_normalization(4).passed


def test_sh_parity():
    u = unit_vectors(np.random.default_rng(1), 50)
    for l, (a, b) in enumerate(zip(real_spherical_harmonics(u, 4), real_spherical_harmonics(-u, 4))):
        np.testing.assert_allclose(b, (-1) ** l * a, atol=1e-14)


def test_sh_rejects_non_unit():
    with pytest.raises(ValueError):
        real_spherical_harmonics(np.array([1.0, 1.0, 0.0]), 2)


def test_sh_rotation_1000_cases():
    res = sh_rotation(np.random.default_rng(2), 1000)
    assert res.passed, res


@settings(max_examples=50, deadline=None)
@given(quaternions, st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: sum(x * x for x in v) > 1e-2))
def test_sh_equivariance_property(q, v):
    R = quat_matrix(q)
    u = np.array(v) / np.linalg.norm(v)
    for l, (a, b) in enumerate(zip(real_spherical_harmonics(R @ u, 3), real_spherical_harmonics(u, 3))):
        np.testing.assert_allclose(a, wigner_d(l, R) @ b, atol=1e-10)


# --- Clebsch-Gordan ------------------------------------------------------


def test_complex_cg_against_sympy():
    for j1 in range(3):
        for j2 in range(3):
            for j3 in range(abs(j1 - j2), j1 + j2 + 1):
                for m1 in range(-j1, j1 + 1):
                    for m2 in range(-j2, j2 + 1):
                        m3 = m1 + m2
                        if abs(m3) > j3:
                            continue
                        ref = float(CG(S(j1), S(m1), S(j2), S(m2), S(j3), S(m3)).doit())
                        assert complex_cg(j1, m1, j2, m2, j3, m3) == pytest.approx(ref, abs=1e-14)


def test_cg_trivial_and_forbidden():
    assert cg_coefficient(0, 0, 0).shape == (1, 1, 1)
    assert cg_coefficient(0, 0, 0)[0, 0, 0] == pytest.approx(1.0, abs=1e-15)
    assert not cg_coefficient(1, 1, 3).any()
    assert cg_coefficient(1, 1, 3).shape == (3, 3, 7)


def test_cg_110_is_scaled_identity():
    C = cg_coefficient(1, 1, 0)[:, :, 0]
    np.testing.assert_allclose(np.abs(C), np.eye(3) / math.sqrt(3), atol=1e-15)
    assert np.sum(C**2) == pytest.approx(1.0, abs=1e-15)
    assert abs(C[0, 0] - C[1, 1]) < 1e-15 and abs(C[1, 1] - C[2, 2]) < 1e-15


def test_cg_reproduces_sh_product_expansion():
    u = unit_vectors(np.random.default_rng(3), 40)
    Y = real_spherical_harmonics(u, 4)
    for l1 in range(3):
        for l2 in range(3):
            for l3 in range(abs(l1 - l2), l1 + l2 + 1):
                proj = np.einsum("abc,na,nb->nc", cg_coefficient(l1, l2, l3), Y[l1], Y[l2])
                if (l1 + l2 + l3) % 2:
                    np.testing.assert_allclose(proj, 0.0, atol=1e-13)
                    continue
                # projection is a fixed multiple of Y_l3 for every direction
                k = np.sum(proj * Y[l3]) / np.sum(Y[l3] ** 2)
                np.testing.assert_allclose(proj, k * Y[l3], atol=1e-12)
                assert abs(k) > 1e-3


def test_cg_orthogonality_and_equivariance():
    assert cg_orthogonality(2).max_error < 1e-12
    assert cg_equivariance(np.random.default_rng(4), 10).max_error < 1e-12


def test_cg_dump(tmp_path):
    path = tmp_path / "cg.json"
    dump_cg_tables(path, 2)
    table = json.loads(path.read_text())
    np.testing.assert_array_equal(np.array(table["1,1,2"]), cg_coefficient(1, 1, 2))


# --- Wigner-D ------------------------------------------------------------


def test_wigner_identity():
    for l in range(5):
        np.testing.assert_allclose(wigner_d(l, np.eye(3)), np.eye(2 * l + 1), atol=1e-15)


def test_wigner_l1_is_permuted_rotation():
    R = random_rotation(np.random.default_rng(5))
    P = np.eye(3)[[1, 2, 0]]  # m = -1, 0, 1 carry y, z, x
    np.testing.assert_allclose(wigner_d(1, R), P @ R @ P.T, atol=1e-12)


def test_wigner_quarter_turn_about_z():
    c = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    D = wigner_d(1, c)
    np.testing.assert_allclose(np.abs(D), np.abs(D).round(), atol=1e-12)
    u = unit_vectors(np.random.default_rng(6), 100)
    rotated = real_spherical_harmonics(u @ c.T, 2)
    plain = real_spherical_harmonics(u, 2)
    for l in (1, 2):
        np.testing.assert_allclose(rotated[l], plain[l] @ wigner_d(l, c).T, atol=1e-12)


def test_wigner_composition_and_orthogonality():
    rng = np.random.default_rng(7)
    for _ in range(10):
        R1, R2 = random_rotation(rng), random_rotation(rng)
        for l in range(5):
            D = wigner_d(l, R1 @ R2)
            np.testing.assert_allclose(D, wigner_d(l, R1) @ wigner_d(l, R2), atol=1e-10)
            np.testing.assert_allclose(D @ D.T, np.eye(2 * l + 1), atol=1e-12)


@pytest.mark.parametrize("bad", [np.diag([1.0, 1.0, -1.0]), 2 * np.eye(3), np.ones((2, 2))])
def test_wigner_rejects_non_rotation(bad):
    with pytest.raises(ValueError):
        wigner_d(1, bad)


# --- rotate_irreps_tensor ------------------------------------------------


def test_rotate_irreps_tensor():
    rng = np.random.default_rng(8)
    x = IrrepsTensor("2x0e+2x1o+1x2e", rng.normal(size=(4, 2 + 6 + 5)))
    np.testing.assert_array_equal(rotate_irreps_tensor(x, np.eye(3)).array, x.array)
    R1, R2 = random_rotation(rng), random_rotation(rng)
    two = rotate_irreps_tensor(rotate_irreps_tensor(x, R2), R1).array
    np.testing.assert_allclose(two, rotate_irreps_tensor(x, R1 @ R2).array, atol=1e-10)
    np.testing.assert_array_equal(rotate_irreps_tensor(x, R1).blocks()[0], x.blocks()[0])


def test_rotate_irreps_tensor_inversion_parity():
    x = IrrepsTensor("1x0e+1x1o+1x1e", np.arange(7.0))
    y = rotate_irreps_tensor(x, -np.eye(3))
    np.testing.assert_array_equal(y.array, [0.0, -1.0, -2.0, -3.0, 4.0, 5.0, 6.0])
