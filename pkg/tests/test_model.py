"""Gaussian value types, covariance construction, batched containers."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynsplat.errors import DegenerateRotation, InvalidScale
from dynsplat.model import (
    DeformationParams,
    DeformSet,
    DynamicGaussian,
    DynamicSet,
    GaussianId,
    Quaternion,
    StaticGaussian,
    StaticSet,
    covariance_from_rs,
    normalize_quaternion,
    quat_to_rotmat,
    quats_to_rotmats,
)

from conftest import make_random_set


unit_floats = st.floats(min_value=-1.0, max_value=1.0,
                        allow_nan=False, allow_infinity=False)


def test_normalize_quaternion():
    q = normalize_quaternion([2.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(q, [1.0, 0.0, 0.0, 0.0])
    with pytest.raises(DegenerateRotation):
        normalize_quaternion([0.0, 0.0, 0.0, 0.0])


@given(st.lists(unit_floats, min_size=4, max_size=4))
def test_quat_to_rotmat_is_orthonormal(raw):
    if np.linalg.norm(raw) < 1e-3:
        return
    R = quat_to_rotmat(normalize_quaternion(raw))
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_identity_quaternion_rotmat():
    np.testing.assert_array_equal(quat_to_rotmat([1.0, 0, 0, 0]), np.eye(3))


def test_quats_to_rotmats_matches_scalar():
    rng = np.random.default_rng(0)
    quats = rng.normal(size=(16, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    batched = quats_to_rotmats(quats)
    for i in range(16):
        np.testing.assert_allclose(batched[i], quat_to_rotmat(quats[i]), atol=1e-15)


def test_covariance_identity_rotation_oracle():
    # Independently computed: R = I, s = (1, 2, 1) gives diag(1, 4, 1).
    cov = covariance_from_rs([1.0, 0.0, 0.0, 0.0], [1.0, 2.0, 1.0])
    np.testing.assert_allclose(cov, np.diag([1.0, 4.0, 1.0]))


def test_covariance_rotation_conjugates():
    # 90 degrees about z swaps the x and y principal variances.
    q = normalize_quaternion([np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)])
    cov = covariance_from_rs(q, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(cov, np.diag([4.0, 1.0, 9.0]), atol=1e-12)


def test_covariance_rejects_bad_scale():
    with pytest.raises(InvalidScale):
        covariance_from_rs([1.0, 0, 0, 0], [1.0, 0.0, 1.0])
    with pytest.raises(InvalidScale):
        covariance_from_rs([1.0, 0, 0, 0], [1.0, -0.5, 1.0])


@given(st.lists(unit_floats, min_size=4, max_size=4),
       st.lists(st.floats(min_value=0.01, max_value=2.0), min_size=3, max_size=3))
def test_covariance_is_spd(raw_q, s):
    if np.linalg.norm(raw_q) < 1e-3:
        return
    cov = covariance_from_rs(normalize_quaternion(raw_q), s)
    np.testing.assert_allclose(cov, cov.T, atol=1e-14)
    eig = np.linalg.eigvalsh(cov)
    assert np.all(eig > 0)
    np.testing.assert_allclose(np.sort(eig), np.sort(np.array(s) ** 2), rtol=1e-9)


def test_quaternion_class_normalizes():
    q = Quaternion(2.0, 0.0, 0.0, 0.0)
    assert q.w == 1.0
    np.testing.assert_array_equal(q.rotation_matrix(), np.eye(3))
    assert Quaternion.identity().as_array().tolist() == [1.0, 0.0, 0.0, 0.0]


def test_static_gaussian_validation():
    ok = dict(mu=(1, 1, 1), scale=(0.1, 0.1, 0.1), quat=(1, 0, 0, 0),
              alpha=0.5, color=(0.5, 0.5, 0.5))
    g = StaticGaussian(**ok)
    assert isinstance(g.quat, Quaternion)  # tuple coerced
    np.testing.assert_allclose(g.covariance(), np.eye(3) * 0.01)
    with pytest.raises(InvalidScale):
        StaticGaussian(**{**ok, "scale": (0.1, 0.0, 0.1)})
    with pytest.raises(ValueError):
        StaticGaussian(**{**ok, "alpha": 1.5})
    with pytest.raises(ValueError):
        StaticGaussian(**{**ok, "color": (0.5, -0.1, 0.5)})


def test_deformation_params_validation():
    with pytest.raises(ValueError):
        DeformationParams((1.5, 0, 0), 4.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        DeformationParams((0, 0, 0), 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        DeformationParams((0, 0, 0), 4.0, 1.2, 0.0)
    ident = DeformationParams.identity(t0=3.0)
    assert ident.velocity == (0.0, 0.0, 0.0)
    assert ident.gamma1 == 1.0
    assert ident.t0 == 3.0


def test_gaussian_id_ordering():
    assert GaussianId(0, 1) < GaussianId(0, 2) < GaussianId(1, 0)
    with pytest.raises(ValueError):
        GaussianId(-1, 0)


def test_static_set_round_trip():
    s = make_random_set(10, np.random.default_rng(3))
    back = StaticSet.from_gaussians(s.to_gaussians())
    np.testing.assert_allclose(back.mu, s.mu)
    np.testing.assert_allclose(back.scale, s.scale)
    np.testing.assert_allclose(back.alpha, s.alpha)
    np.testing.assert_allclose(back.color, s.color)
    # Quaternions may flip sign but represent the same rotation.
    np.testing.assert_allclose(
        quats_to_rotmats(back.quat), quats_to_rotmats(s.quat), atol=1e-12
    )


def test_static_set_validate():
    s = make_random_set(5, np.random.default_rng(4))
    s.validate()
    bad = s.copy()
    bad.alpha[2] = 1.5
    with pytest.raises(ValueError):
        bad.validate()
    bad2 = s.copy()
    bad2.quat[0] *= 3.0
    with pytest.raises(DegenerateRotation):
        bad2.validate()


def test_static_set_covariances_match_scalar():
    s = make_random_set(6, np.random.default_rng(5))
    covs = s.covariances()
    for i, g in enumerate(s.to_gaussians()):
        np.testing.assert_allclose(covs[i], g.covariance(), atol=1e-14)


def test_static_set_default_ids():
    s = StaticSet(np.zeros((3, 3)) + 1.0, np.full((3, 3), 0.1),
                  np.tile([1.0, 0, 0, 0], (3, 1)), np.full(3, 0.5),
                  np.full((3, 3), 0.5))
    np.testing.assert_array_equal(s.ids[:, 0], [0, 0, 0])
    np.testing.assert_array_equal(s.ids[:, 1], [0, 1, 2])


def test_deform_set_round_trip():
    params = [
        DeformationParams((0.1, -0.2, 0.0), 3.0, 0.7, 1.0),
        DeformationParams((0.0, 0.0, 0.5), 8.0, 1.0, 2.0),
    ]
    ds = DeformSet.from_params(params)
    assert ds.params() == params
    ds.validate()
    ds.velocity[0, 0] = 2.0
    with pytest.raises(ValueError):
        ds.validate()


def test_dynamic_set_defaults_identity_deform():
    base = make_random_set(4, np.random.default_rng(6))
    dyn = DynamicSet(base)
    assert len(dyn) == 4
    np.testing.assert_array_equal(dyn.deform.velocity, np.zeros((4, 3)))
    np.testing.assert_array_equal(dyn.deform.gamma1, np.ones(4))


def test_dynamic_set_length_mismatch():
    base = make_random_set(4, np.random.default_rng(6))
    with pytest.raises(ValueError):
        DynamicSet(base, DeformSet.identity(3))


def test_dynamic_set_select_and_concatenate():
    base = make_random_set(6, np.random.default_rng(8))
    dyn = DynamicSet(base)
    picked = dyn.select(np.array([0, 2, 4]))
    assert len(picked) == 3
    np.testing.assert_array_equal(picked.base.mu, base.mu[[0, 2, 4]])
    merged = DynamicSet.concatenate(picked, dyn.select(np.array([1])))
    assert len(merged) == 4
    np.testing.assert_array_equal(merged.base.ids[-1], base.ids[1])


def test_dynamic_set_gaussian_round_trip():
    base = make_random_set(3, np.random.default_rng(9), frame=2)
    deform = DeformSet(np.full((3, 3), 0.25), np.full(3, 5.0),
                       np.full(3, 0.5), np.full(3, 2.0))
    dyn = DynamicSet(base, deform)
    gaussians = dyn.to_gaussians()
    assert all(isinstance(g, DynamicGaussian) for g in gaussians)
    assert gaussians[0].id == GaussianId(2, 0)
    back = DynamicSet.from_gaussians(gaussians)
    np.testing.assert_allclose(back.base.mu, base.mu)
    np.testing.assert_allclose(back.deform.velocity, deform.velocity)
    np.testing.assert_array_equal(back.base.ids, base.ids)
