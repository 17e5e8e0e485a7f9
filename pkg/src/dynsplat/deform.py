"""Time evaluation of dynamic Gaussians.

Linear position integration, the sigmoid opacity lifecycle, the inverse-depth
mapping and pixel-aligned position assembly. All functions broadcast over
numpy arrays; materialize_set is the batched path used by the renderer.
"""

from __future__ import annotations

import numpy as np

from .errors import OutOfWindow
from .model import DynamicGaussian, DynamicSet, StaticGaussian, StaticSet

# g(z) = 2/(1+z) diverges at z = -1; clamp keeps depth finite.
Z_INV_EPS = 1e-3

# Deformation is valid one normalized interval around t0 (boundary inclusive,
# with a little slack for accumulated float error in global<->local mapping).
_WINDOW_TOL = 1e-9


def _sigmoid(x):
    # Split by sign to avoid overflow in exp for large |x|.
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def position_at(mu0, v, t0: float, t: float) -> np.ndarray:
    """mu0 + v * (t - t0). Raises OutOfWindow when |t - t0| > 1."""
    if abs(t - t0) > 1.0 + _WINDOW_TOL:
        raise OutOfWindow(f"|t - t0| = {abs(t - t0):g} exceeds the deformation window")
    mu0 = np.asarray(mu0, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return mu0 + v * (t - t0)


def opacity_at(alpha0, gamma0, gamma1, t0, t):
    """Lifecycle opacity alpha0 * sigmoid(-gamma0(|t-t0| - gamma1)) / sigmoid(gamma0*gamma1).

    Equals alpha0 at t = t0, decays symmetrically in |t - t0|; the ratio
    never exceeds 1 analytically, the clamp only absorbs float overshoot.
    """
    alpha0 = np.asarray(alpha0, dtype=np.float64)
    gamma0 = np.asarray(gamma0, dtype=np.float64)
    gamma1 = np.asarray(gamma1, dtype=np.float64)
    dt = np.abs(np.asarray(t, dtype=np.float64) - np.asarray(t0, dtype=np.float64))
    num = _sigmoid(-gamma0 * (dt - gamma1))
    den = _sigmoid(gamma0 * gamma1)
    out = np.clip(alpha0 * num / den, 0.0, alpha0)
    if out.ndim == 0:
        return float(out)
    return out


def opacity_at_with_grads(alpha0, gamma0, gamma1, t0, t):
    """opacity_at plus partials w.r.t. (alpha0, gamma0, gamma1).

    Used by the fitter; broadcasts like opacity_at.
    """
    alpha0 = np.asarray(alpha0, dtype=np.float64)
    gamma0 = np.asarray(gamma0, dtype=np.float64)
    gamma1 = np.asarray(gamma1, dtype=np.float64)
    dt = np.abs(np.asarray(t, dtype=np.float64) - np.asarray(t0, dtype=np.float64))
    a = _sigmoid(-gamma0 * (dt - gamma1))
    b = _sigmoid(gamma0 * gamma1)
    ratio = a / b
    val = alpha0 * ratio
    # d a / d gamma0 = a(1-a) * -(dt - gamma1);  d b / d gamma0 = b(1-b) * gamma1
    da_dg0 = a * (1.0 - a) * -(dt - gamma1)
    db_dg0 = b * (1.0 - b) * gamma1
    dval_dg0 = alpha0 * (da_dg0 * b - a * db_dg0) / (b * b)
    # d a / d gamma1 = a(1-a) * gamma0;          d b / d gamma1 = b(1-b) * gamma0
    da_dg1 = a * (1.0 - a) * gamma0
    db_dg1 = b * (1.0 - b) * gamma0
    dval_dg1 = alpha0 * (da_dg1 * b - a * db_dg1) / (b * b)
    return val, ratio, dval_dg0, dval_dg1


def depth_map(z_inv):
    """Inverse-depth mapping g(z) = 2/(1+z), with z clamped to [-1+1e-3, 1]."""
    z = np.clip(np.asarray(z_inv, dtype=np.float64), -1.0 + Z_INV_EPS, 1.0)
    out = 2.0 / (1.0 + z)
    if out.ndim == 0:
        return float(out)
    return out


def depth_map_inverse(d):
    """Inverse of depth_map on its clamped domain: z = 2/d - 1."""
    d = np.asarray(d, dtype=np.float64)
    out = 2.0 / d - 1.0
    if out.ndim == 0:
        return float(out)
    return out


def depth_map_grad(z_inv):
    """d g / d z on the clamped domain; zero where the clamp binds."""
    z = np.asarray(z_inv, dtype=np.float64)
    inside = (z > -1.0 + Z_INV_EPS) & (z < 1.0)
    zc = np.clip(z, -1.0 + Z_INV_EPS, 1.0)
    g = np.where(inside, -2.0 / (1.0 + zc) ** 2, 0.0)
    if g.ndim == 0:
        return float(g)
    return g


def pixel_aligned_position(u, v, offset) -> np.ndarray:
    """Assemble a canonical position from a token anchor and a bounded offset.

    (u + o0, v + o1, g(o2)); anchors are canonical pixel-grid coordinates.
    """
    o = np.asarray(offset, dtype=np.float64)
    if o.ndim == 1:
        return np.array([u + o[0], v + o[1], depth_map(o[2])])
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return np.stack([u + o[..., 0], v + o[..., 1], depth_map(o[..., 2])], axis=-1)


def materialize(g: DynamicGaussian, t: float) -> StaticGaussian:
    """Evaluate a dynamic Gaussian at time t: deformed position and opacity,
    scale/rotation/color unchanged."""
    mu_t = position_at(g.base.mu, g.deform.velocity, g.deform.t0, t)
    alpha_t = opacity_at(g.base.alpha, g.deform.gamma0, g.deform.gamma1, g.deform.t0, t)
    return StaticGaussian(tuple(mu_t), g.base.scale, g.base.quat, float(alpha_t), g.base.color)


def materialize_set(scene: DynamicSet, t: float) -> StaticSet:
    """Batched materialize. Raises OutOfWindow if any Gaussian's window misses t."""
    d = scene.deform
    if len(scene) and np.any(np.abs(t - d.t0) > 1.0 + _WINDOW_TOL):
        worst = float(np.max(np.abs(t - d.t0)))
        raise OutOfWindow(f"t = {t:g} outside some deformation window (max |t-t0| = {worst:g})")
    mu_t = scene.base.mu + d.velocity * (t - d.t0)[:, np.newaxis]
    alpha_t = opacity_at(scene.base.alpha, d.gamma0, d.gamma1, d.t0, t)
    return StaticSet(mu_t, scene.base.scale, scene.base.quat, alpha_t, scene.base.color, scene.base.ids)
