"""Time evaluation: linear motion, opacity lifecycle, inverse-depth mapping."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynsplat.deform import (
    depth_map,
    depth_map_grad,
    depth_map_inverse,
    materialize,
    materialize_set,
    opacity_at,
    opacity_at_with_grads,
    pixel_aligned_position,
    position_at,
)
from dynsplat.errors import OutOfWindow
from dynsplat.model import DeformSet, DynamicSet

from conftest import make_random_set


g0_st = st.floats(min_value=0.1, max_value=50.0, allow_nan=False)
g1_st = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
dt_st = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False)


def test_position_linear():
    np.testing.assert_allclose(
        position_at([1.0, 2.0, 3.0], [0.5, -0.5, 0.0], 2.0, 2.5),
        [1.25, 1.75, 3.0],
    )
    # Backward in time works the same way.
    np.testing.assert_allclose(
        position_at([1.0, 2.0, 3.0], [0.5, -0.5, 0.0], 2.0, 1.0),
        [0.5, 2.5, 3.0],
    )


def test_position_window():
    position_at([0, 0, 0], [1, 0, 0], 0.0, 1.0)  # boundary is inclusive
    with pytest.raises(OutOfWindow):
        position_at([0, 0, 0], [1, 0, 0], 0.0, 1.01)


def test_opacity_identity_at_t0():
    # Ratio is exactly 1 at dt = 0; no float slack needed.
    for g0, g1 in [(4.0, 0.5), (0.3, 1.0), (20.0, 0.1)]:
        assert opacity_at(0.73, g0, g1, 2.0, 2.0) == 0.73


def test_opacity_halfway_oracle():
    # At |t - t0| = gamma1 the ratio is sigmoid(0)/sigmoid(gamma0*gamma1);
    # frozen reference value computed independently for gamma0=4, gamma1=0.5.
    val = opacity_at(1.0, 4.0, 0.5, 0.0, 0.5)
    assert val == pytest.approx(0.5676676416183064, rel=1e-13)
    assert opacity_at(0.5, 4.0, 0.5, 0.0, 0.5) == pytest.approx(
        0.5676676416183064 / 2, rel=1e-13
    )


def test_opacity_no_fade_when_gamma1_full():
    # gamma1 = 1 keeps opacity near alpha0 across the whole window for
    # moderate rates, and decay grows as the window edge is passed.
    # sigma(2)/sigma(4) at the midpoint keeps ~90% of alpha0.
    a_mid = opacity_at(0.9, 4.0, 1.0, 0.0, 0.5)
    a_edge = opacity_at(0.9, 4.0, 1.0, 0.0, 1.0)
    assert a_mid > 0.8
    assert a_edge < a_mid


@given(a0=st.floats(min_value=0.0, max_value=1.0), g0=g0_st, g1=g1_st, dt=dt_st)
def test_opacity_bounded_and_symmetric(a0, g0, g1, dt):
    v = opacity_at(a0, g0, g1, 0.0, dt)
    assert 0.0 <= v <= a0
    assert v == opacity_at(a0, g0, g1, 0.0, -dt)
    # Shifting t0 shifts the profile; only float rounding of t - t0 differs.
    assert opacity_at(a0, g0, g1, 5.0, 5.0 + dt) == pytest.approx(v, abs=1e-9)


@given(g0=g0_st, g1=g1_st, dt1=dt_st, dt2=dt_st)
def test_opacity_monotone_in_distance(g0, g1, dt1, dt2):
    lo, hi = sorted([abs(dt1), abs(dt2)])
    assert opacity_at(1.0, g0, g1, 0.0, hi) <= opacity_at(1.0, g0, g1, 0.0, lo) + 1e-15


def test_opacity_broadcasts():
    a = opacity_at(np.full(4, 0.8), np.full(4, 4.0), np.array([0.1, 0.4, 0.7, 1.0]),
                   np.zeros(4), 0.5)
    assert a.shape == (4,)
    assert np.all(np.diff(a) > 0)  # larger gamma1 holds opacity longer


def test_opacity_grads_match_fd():
    rng = np.random.default_rng(11)
    for _ in range(20):
        a0 = rng.uniform(0.1, 1.0)
        g0 = rng.uniform(0.5, 10.0)
        g1 = rng.uniform(0.05, 0.95)
        dt = rng.uniform(-1.0, 1.0)
        val, ratio, d_g0, d_g1 = opacity_at_with_grads(a0, g0, g1, 0.0, dt)
        assert val == pytest.approx(opacity_at(a0, g0, g1, 0.0, dt), rel=1e-12)
        assert ratio == pytest.approx(val / a0, rel=1e-12)
        h = 1e-6
        fd_g0 = (opacity_at(a0, g0 + h, g1, 0.0, dt)
                 - opacity_at(a0, g0 - h, g1, 0.0, dt)) / (2 * h)
        fd_g1 = (opacity_at(a0, g0, g1 + h, 0.0, dt)
                 - opacity_at(a0, g0, g1 - h, 0.0, dt)) / (2 * h)
        assert d_g0 == pytest.approx(fd_g0, rel=1e-5, abs=1e-7)
        assert d_g1 == pytest.approx(fd_g1, rel=1e-5, abs=1e-7)


def test_depth_map_values():
    assert depth_map(0.0) == 2.0
    assert depth_map(1.0) == 1.0
    # Clamp at the singular end keeps depth finite.
    assert depth_map(-1.0) == depth_map(-1.0 + 1e-3) == pytest.approx(2000.0)
    assert depth_map(-5.0) == depth_map(-1.0)


@given(z=st.floats(min_value=-0.999, max_value=1.0))
def test_depth_map_round_trip(z):
    assert depth_map_inverse(depth_map(z)) == pytest.approx(z, abs=1e-12)


@given(z1=st.floats(min_value=-0.999, max_value=1.0),
       z2=st.floats(min_value=-0.999, max_value=1.0))
def test_depth_map_monotone_decreasing(z1, z2):
    lo, hi = sorted([z1, z2])
    assert depth_map(hi) <= depth_map(lo)


def test_depth_map_grad():
    h = 1e-7
    for z in [-0.9, -0.2, 0.0, 0.5, 0.95]:
        fd = (depth_map(z + h) - depth_map(z - h)) / (2 * h)
        assert depth_map_grad(z) == pytest.approx(fd, rel=1e-6)
    # Zero gradient where the clamp binds.
    assert depth_map_grad(-1.5) == 0.0
    assert depth_map_grad(1.5) == 0.0


def test_pixel_aligned_position():
    p = pixel_aligned_position(0.25, 0.75, np.array([0.1, -0.1, 0.0]))
    np.testing.assert_allclose(p, [0.35, 0.65, 2.0])
    # Batched: anchors (N,), offsets (N, 3).
    u = np.array([0.25, 1.25])
    v = np.array([0.75, 0.25])
    off = np.array([[0.1, -0.1, 0.0], [0.0, 0.0, 1.0]])
    batch = pixel_aligned_position(u, v, off)
    np.testing.assert_allclose(batch, [[0.35, 0.65, 2.0], [1.25, 0.25, 1.0]])


def test_materialize_moves_and_fades():
    base = make_random_set(5, np.random.default_rng(12))
    deform = DeformSet(np.full((5, 3), 0.2), np.full(5, 4.0),
                       np.full(5, 0.5), np.zeros(5))
    dyn = DynamicSet(base, deform)
    snap = materialize_set(dyn, 0.5)
    np.testing.assert_allclose(snap.mu, base.mu + 0.1)
    np.testing.assert_allclose(
        snap.alpha, opacity_at(base.alpha, 4.0, 0.5, 0.0, 0.5)
    )
    # Carried fields untouched, identity preserved.
    np.testing.assert_array_equal(snap.scale, base.scale)
    np.testing.assert_array_equal(snap.quat, base.quat)
    np.testing.assert_array_equal(snap.color, base.color)
    np.testing.assert_array_equal(snap.ids, base.ids)


def test_materialize_set_matches_scalar():
    base = make_random_set(4, np.random.default_rng(13))
    rng = np.random.default_rng(14)
    deform = DeformSet(rng.uniform(-0.3, 0.3, (4, 3)), rng.uniform(1, 8, 4),
                       rng.uniform(0.1, 1.0, 4), np.zeros(4))
    dyn = DynamicSet(base, deform)
    snap = materialize_set(dyn, 0.8)
    for i, g in enumerate(dyn.to_gaussians()):
        single = materialize(g, 0.8)
        np.testing.assert_allclose(snap.mu[i], single.mu, atol=1e-15)
        assert snap.alpha[i] == pytest.approx(single.alpha, rel=1e-14)


def test_materialize_window_enforced():
    base = make_random_set(3, np.random.default_rng(15))
    dyn = DynamicSet(base, DeformSet.identity(3, t0=2.0))
    materialize_set(dyn, 3.0)  # boundary ok
    with pytest.raises(OutOfWindow):
        materialize_set(dyn, 3.5)
    with pytest.raises(OutOfWindow):
        materialize(dyn.to_gaussians()[0], 0.5)


def test_materialize_empty_scene():
    assert len(materialize_set(DynamicSet.empty(), 0.0)) == 0
