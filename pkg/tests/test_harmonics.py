import numpy as np
import pytest

from est import tensor as T
from est.harmonics import (Orientation, SteerableTensor, WignerD, degree_slice,
                           eval_real_sh, num_components, random_rotation,
                           rotate_steerable, wigner_d)
from est.tensor import ContractError


def closed_forms_l2(theta, phi):
    """The nine real harmonics for l <= 2, written out directly."""
    st, ct = np.sin(theta), np.cos(theta)
    return np.array([
        np.sqrt(1 / (4 * np.pi)) * np.ones_like(theta),
        np.sqrt(3 / (4 * np.pi)) * np.sin(phi) * st,
        np.sqrt(3 / (4 * np.pi)) * ct,
        np.sqrt(3 / (4 * np.pi)) * np.cos(phi) * st,
        np.sqrt(15 / (16 * np.pi)) * np.sin(2 * phi) * st ** 2,
        np.sqrt(15 / (4 * np.pi)) * np.sin(phi) * st * ct,
        np.sqrt(5 / (16 * np.pi)) * (3 * ct ** 2 - 1),
        np.sqrt(15 / (4 * np.pi)) * np.cos(phi) * st * ct,
        np.sqrt(15 / (16 * np.pi)) * np.cos(2 * phi) * st ** 2,
    ]).T


def random_units(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_l0_constant():
    for p in [(0, 0, 1.0), (1.0, 0, 0), (0.6, -0.8, 0.0)]:
        val = eval_real_sh(0, np.array(p))
        assert abs(val[0] - 0.2820947918) < 1e-10


def test_y10_poles_and_equator():
    north = eval_real_sh(1, np.array([0.0, 0.0, 1.0]))
    assert abs(north[2] - 0.4886025119) < 1e-10
    equator = eval_real_sh(1, np.array([1.0, 0.0, 0.0]))
    assert abs(equator[2]) < 1e-14


def test_y20_equator_value():
    # substitute theta = pi/2 into sqrt(5/16pi)(3cos^2 - 1)
    val = eval_real_sh(2, np.array([0.0, 1.0, 0.0]))
    assert abs(val[6] - (-0.3153915652)) < 1e-9


def test_closed_form_table_matches_everywhere():
    rng = T.seeded_rng(1)
    p = random_units(rng, 1000)
    theta = np.arccos(p[:, 2])
    phi = np.arctan2(p[:, 1], p[:, 0])
    got = eval_real_sh(2, p)
    want = closed_forms_l2(theta, phi)
    assert np.max(np.abs(got - want)) < 1e-12


def test_non_unit_input_rejected():
    with pytest.raises(ContractError):
        eval_real_sh(2, np.array([0.0, 0.0, 2.0]))


def test_orientation_angles_roundtrip():
    o = Orientation.from_angles(0.7, 2.1)
    assert abs(o.theta - 0.7) < 1e-12
    assert abs(o.phi - 2.1) < 1e-12
    v = eval_real_sh(1, o)
    assert v.shape == (4,)


def test_orthogonality_under_quadrature():
    # Gauss-Legendre in cos(theta) x uniform phi integrates band-limited
    # products exactly; off-diagonal Gram entries must vanish.
    L = 4
    nt, nphi = 24, 2 * (2 * L) + 1
    xs, ws = np.polynomial.legendre.leggauss(nt)
    phis = 2 * np.pi * np.arange(nphi) / nphi
    theta = np.arccos(xs)
    tt, pp = np.meshgrid(theta, phis, indexing="ij")
    pts = np.stack([np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], axis=-1)
    w = np.repeat(ws, nphi) * (2 * np.pi / nphi)
    y = eval_real_sh(L, pts.reshape(-1, 3))
    gram = (y * w[:, None]).T @ y
    assert np.max(np.abs(gram - np.eye(num_components(L)))) < 1e-12


def test_wigner_identity_rotation():
    d = wigner_d(3, np.eye(3))
    for l in range(4):
        assert np.allclose(d.block(l), np.eye(2 * l + 1), atol=1e-12)


def test_wigner_d1_is_rotation_up_to_component_order():
    # degree-1 components are ordered (y, z, x)
    rng = T.seeded_rng(2)
    R = random_rotation(rng)
    d = wigner_d(1, R)
    perm = np.array([1, 2, 0])  # SH components order as (y, z, x)
    assert np.max(np.abs(d.block(1) - R[np.ix_(perm, perm)])) < 1e-10


def test_wigner_steerability():
    rng = T.seeded_rng(3)
    L = 6
    for _ in range(20):
        R = random_rotation(rng)
        d = wigner_d(L, R)
        p = random_units(rng, 5)
        lhs = eval_real_sh(L, p @ R.T)
        rhs = eval_real_sh(L, p) @ d.matrix().T
        assert np.max(np.abs(lhs - rhs)) < 1e-8


def test_wigner_blocks_orthogonal():
    rng = T.seeded_rng(4)
    d = wigner_d(5, random_rotation(rng))
    for l in range(6):
        b = d.block(l)
        assert np.max(np.abs(b @ b.T - np.eye(2 * l + 1))) < 1e-10


def test_wigner_composition():
    rng = T.seeded_rng(5)
    r1, r2 = random_rotation(rng), random_rotation(rng)
    d1, d2, d12 = wigner_d(4, r1), wigner_d(4, r2), wigner_d(4, r1 @ r2)
    for l in range(5):
        assert np.max(np.abs(d1.block(l) @ d2.block(l) - d12.block(l))) < 1e-8


def test_wigner_rejects_non_rotation():
    with pytest.raises(ContractError):
        wigner_d(2, 2.0 * np.eye(3))
    with pytest.raises(ContractError):
        wigner_d(2, np.diag([1.0, 1.0, -1.0]))  # reflection


def test_rotate_steerable_paths_agree():
    rng = T.seeded_rng(6)
    x = SteerableTensor.random(rng, 3, channels=4)
    r1, r2 = random_rotation(rng), random_rotation(rng)
    a = rotate_steerable(rotate_steerable(x, wigner_d(3, r2)), wigner_d(3, r1))
    b = rotate_steerable(x, wigner_d(3, r1 @ r2))
    assert np.max(np.abs(a.coeffs - b.coeffs)) < 1e-9


def test_rotate_steerable_identity_and_l0():
    rng = T.seeded_rng(7)
    x = SteerableTensor.random(rng, 2, channels=3)
    same = rotate_steerable(x, wigner_d(2, np.eye(3)))
    assert np.allclose(same.coeffs, x.coeffs, atol=1e-12)
    rot = rotate_steerable(x, wigner_d(2, random_rotation(rng)))
    assert np.allclose(rot.coeffs[0], x.coeffs[0], atol=1e-12)


def test_rotate_degree_mismatch_errors():
    rng = T.seeded_rng(8)
    x = SteerableTensor.random(rng, 3)
    with pytest.raises(ContractError):
        rotate_steerable(x, wigner_d(2, np.eye(3)))


def test_random_rotation_properties():
    rng = T.seeded_rng(9)
    for _ in range(10):
        R = random_rotation(rng)
        assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12
        assert abs(np.linalg.det(R) - 1.0) < 1e-12

    same = random_rotation(T.seeded_rng(42))
    again = random_rotation(T.seeded_rng(42))
    assert np.array_equal(same, again)


def test_random_rotation_haar_mean():
    rng = T.seeded_rng(10)
    acc = np.zeros((3, 3))
    n = 100_000
    for _ in range(n):
        acc += random_rotation(rng)
    assert np.max(np.abs(acc / n)) < 1e-2


def test_steerable_tensor_shape_contract():
    with pytest.raises(ContractError):
        SteerableTensor(2, np.zeros((8, 1)))
    st = SteerableTensor.zeros(2, 3)
    assert st.block(1).shape == (3, 3)
    assert degree_slice(2) == slice(4, 9)
