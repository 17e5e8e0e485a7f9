"""Analytic parameter gradients checked against central finite differences.

The blend is non-differentiable exactly at the 3-sigma footprint cut, so a
parameter whose +-h perturbation flips any pixel's footprint membership is
excluded from the comparison (the flip changes the loss by a step of height
~alpha * exp(-4.5), which finite differences see but the analytic gradient,
correctly, does not).
"""

import numpy as np
import pytest

from dynsplat.camera import OrthoCamera
from dynsplat.losses import FrameTarget, LossWeights, total_static_loss_grad
from dynsplat.model import DeformSet, DynamicSet, GaussianId, StaticGaussian, StaticSet
from dynsplat.render import (
    BLUR_FLOOR,
    Q_MAX,
    project_set,
    render,
    render_gradients,
    render_gradients_dynamic,
)

H = W = 32
CAM = OrthoCamera.canonical(W, H)
FD_H = 1e-4
WEIGHTS = LossWeights(lambda_mse=1.0, lambda_depth=0.05, lambda_mask=3.0)
DEPTH_W = 0.02  # pinned adaptive weight so the objective is fixed


def loss_fn(buf, tgt):
    return total_static_loss_grad(buf, tgt, WEIGHTS, depth_weight_override=DEPTH_W)


def loss_value(scene, target):
    buf = render(scene, CAM)
    res = total_static_loss_grad(buf, target, WEIGHTS, need_grads=False,
                                 depth_weight_override=DEPTH_W)
    return res.value


def footprint_signature(scene):
    """Boolean per-splat in-footprint grid: q <= Q_MAX after the blur."""
    centers, cov2d, _ = project_set(scene, CAM)
    cov = cov2d.copy()
    cov[:, 0] += BLUR_FLOOR
    cov[:, 2] += BLUR_FLOOR
    xs = np.arange(W) + 0.5
    ys = np.arange(H) + 0.5
    sig = np.zeros((len(scene), H, W), dtype=bool)
    for i in range(len(scene)):
        a, b, c = cov[i]
        det = a * c - b * b
        ca, cb, cc = c / det, -b / det, a / det
        dx = xs - centers[i, 0]
        dy = ys - centers[i, 1]
        q = ca * dx[None, :] ** 2 + 2 * cb * dx[None, :] * dy[:, None] + cc * dy[:, None] ** 2
        sig[i] = q <= Q_MAX
    return sig


def make_scene(n=6, seed=51):
    # Opacities capped at 0.7: six stacked layers keep T above the early-stop
    # threshold and every contribution below the alpha clamp, so the only
    # non-smoothness left is the footprint cut.
    rng = np.random.default_rng(seed)
    gaussians, ids = [], []
    for i in range(n):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        gaussians.append(StaticGaussian(
            mu=tuple(rng.uniform([0.4, 0.4, 1.0], [1.6, 1.6, 2.5])),
            scale=tuple(rng.uniform(0.08, 0.3, size=3)),
            quat=tuple(q),
            alpha=float(rng.uniform(0.2, 0.7)),
            color=tuple(rng.uniform(0.1, 0.9, size=3)),
        ))
        ids.append(GaussianId(0, i))
    return StaticSet.from_gaussians(gaussians, ids=ids)


def make_target(seed=52):
    rng = np.random.default_rng(seed)
    return FrameTarget(rgb=rng.random((H, W, 3)),
                       depth=rng.random((H, W)) * 1.5 + 1.0,
                       mask=rng.random((H, W)) > 0.5)


def _fd_check(scene, target, grads, fields):
    """Central differences per scalar; returns (checked, skipped, failures)."""
    checked = skipped = 0
    failures = []
    for name in fields:
        arr = getattr(scene, name) if name != "alpha" else None
        param = scene.alpha if name == "alpha" else arr
        g = getattr(grads, "alpha" if name == "alpha" else name)
        it = np.ndindex(param.shape)
        for idx in it:
            plus = scene.copy()
            minus = scene.copy()
            getattr(plus, name)[idx] += FD_H
            getattr(minus, name)[idx] -= FD_H
            if not np.array_equal(footprint_signature(plus),
                                  footprint_signature(minus)):
                skipped += 1
                continue
            fd = (loss_value(plus, target) - loss_value(minus, target)) / (2 * FD_H)
            checked += 1
            if not np.isclose(g[idx], fd, rtol=5e-3, atol=5e-7):
                failures.append((name, idx, float(g[idx]), float(fd)))
    return checked, skipped, failures


def test_static_gradients_match_fd():
    scene = make_scene()
    target = make_target()
    value, _, grads, _ = render_gradients(scene, CAM, target, loss_fn)
    assert value == pytest.approx(loss_value(scene, target), rel=1e-12)
    checked, skipped, failures = _fd_check(
        scene, target, grads, ("mu", "scale", "quat", "alpha", "color")
    )
    assert not failures, failures
    # 6 splats x 14 scalars = 84; the footprint exclusion must stay rare.
    assert checked >= 70
    assert checked + skipped == 84


def test_dynamic_gradients_match_fd():
    base = make_scene(n=4, seed=53)
    rng = np.random.default_rng(54)
    deform = DeformSet(rng.uniform(-0.2, 0.2, (4, 3)), rng.uniform(2.0, 6.0, 4),
                       rng.uniform(0.3, 0.9, 4), np.zeros(4))
    scene = DynamicSet(base, deform)
    target = make_target(seed=55)
    t = 0.6

    def dyn_loss(s):
        from dynsplat.deform import materialize_set
        return loss_value(materialize_set(s, t), target)

    value, _, grads, _ = render_gradients_dynamic(scene, t, CAM, target, loss_fn)
    assert value == pytest.approx(dyn_loss(scene), rel=1e-12)

    checked = skipped = 0
    failures = []
    specs = [("velocity", scene.deform.velocity, grads.velocity),
             ("gamma0", scene.deform.gamma0, grads.gamma0),
             ("gamma1", scene.deform.gamma1, grads.gamma1)]
    from dynsplat.deform import materialize_set
    for name, param, g in specs:
        for idx in np.ndindex(param.shape):
            plus = scene.copy()
            minus = scene.copy()
            getattr(plus.deform, name)[idx] += FD_H
            getattr(minus.deform, name)[idx] -= FD_H
            sig_p = footprint_signature(materialize_set(plus, t))
            sig_m = footprint_signature(materialize_set(minus, t))
            if not np.array_equal(sig_p, sig_m):
                skipped += 1
                continue
            fd = (dyn_loss(plus) - dyn_loss(minus)) / (2 * FD_H)
            checked += 1
            if not np.isclose(g[idx], fd, rtol=5e-3, atol=5e-7):
                failures.append((name, idx, float(g[idx]), float(fd)))
    assert not failures, failures
    assert checked >= 16
    assert checked + skipped == 20


def test_gradient_descends_loss():
    # One small step along the negative gradient must reduce the objective.
    scene = make_scene(seed=56)
    target = make_target(seed=57)
    value, _, grads, _ = render_gradients(scene, CAM, target, loss_fn)
    step = scene.copy()
    lr = 1e-3
    step.mu -= lr * grads.mu
    step.color = np.clip(step.color - lr * grads.color, 0, 1)
    step.alpha = np.clip(step.alpha - lr * grads.alpha, 0, 1)
    assert loss_value(step, target) < value


def test_empty_scene_gradients():
    # A constant (all-background) depth plane cannot be tau-normalized, so
    # the empty-scene check runs photometric-only.
    target = make_target(seed=58)
    rgb_only = LossWeights(lambda_depth=0.0)

    def photometric(buf, tgt):
        return total_static_loss_grad(buf, tgt, rgb_only)

    value, _, grads, buf = render_gradients(StaticSet.empty(), CAM, target,
                                            photometric)
    assert grads.mu.shape == (0, 3)
    assert value > 0.0
    assert not buf.rgb.any()


def test_skipped_splats_get_zero_gradients():
    scene = make_scene(seed=59)
    scene.mu[2, 0] = np.nan
    target = make_target(seed=60)
    _, _, grads, _ = render_gradients(scene, CAM, target, loss_fn)
    assert not grads.mu[2].any()
    assert not grads.scale[2].any()
    assert grads.alpha[2] == 0.0
