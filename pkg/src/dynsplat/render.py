"""Orthographic EWA splat rendering.

Projects 3D Gaussians to screen-space splats (center, 2x2 footprint
covariance, camera depth), depth-sorts with a stable id tie-break, and
alpha-blends RGB, depth and opacity front to back through one of the kernel
backends. The backward path chains the kernel's per-splat gradients to the
raw Gaussian parameters (mu, scale, quaternion, opacity, color) and, for
dynamic scenes, through the deformation to (velocity, gamma0, gamma1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import OrthoCamera
from .deform import materialize_set, opacity_at_with_grads
from .errors import DegenerateRotation
from .model import DynamicSet, StaticSet, quats_to_rotmats

log = logging.getLogger("dynsplat.render")

# Anti-alias dilation added to the 2D footprint diagonal at raster time, px^2.
BLUR_FLOOR = 0.3
TILE_SIZE = 16
# Normalized depth is reported only where accumulated alpha clears this.
ALPHA_NORM_EPS = 1e-6

ALPHA_CLAMP = _kernels.ALPHA_CLAMP
T_EPS = _kernels.T_EPS
Q_MAX = _kernels.Q_MAX


@dataclass
class ImageBuffer:
    """Render target: premultiplied rgb, alpha-normalized depth, coverage."""

    width: int
    height: int
    rgb: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray

    @staticmethod
    def zeros(width: int, height: int) -> "ImageBuffer":
        return ImageBuffer(
            width, height,
            np.zeros((height, width, 3)), np.zeros((height, width)), np.zeros((height, width)),
        )

    def validate(self) -> None:
        h, w = self.height, self.width
        if self.rgb.shape != (h, w, 3) or self.depth.shape != (h, w) or self.alpha.shape != (h, w):
            raise ValueError("plane shapes inconsistent with width/height")
        if np.any(self.alpha < 0) or np.any(self.alpha > 1):
            raise ValueError("alpha out of [0,1]")
        if np.any(self.rgb > self.alpha[:, :, None] + 1e-6):
            raise ValueError("rgb exceeds premultiplied alpha bound")


@dataclass
class RenderStats:
    """Per-call counters; n_skipped counts splats dropped for singular footprints."""

    n_input: int = 0
    n_rendered: int = 0
    n_skipped: int = 0
    backend: str = _kernels.BACKEND


@dataclass(frozen=True)
class ProjectedGaussian:
    """Screen-space splat before the raster-time blur dilation."""

    center2d: tuple
    cov2d: np.ndarray
    camera_depth: float
    opacity: float
    color: tuple
    source_id: tuple


def _as_set(gaussians) -> StaticSet:
    if isinstance(gaussians, StaticSet):
        return gaussians
    return StaticSet.from_gaussians(list(gaussians))


def _normalized_quats(quat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(quat, axis=1)
    if np.any(norms <= 1e-12):
        raise DegenerateRotation("quaternion norm too small to normalize")
    return quat / norms[:, None], norms


def project_set(gaussians: StaticSet, cam: OrthoCamera):
    """Vectorized projection: centers (N,2), packed cov2d (N,3) as (a,b,c),
    camera depths (N,). cov2d is the raw J W Sigma W^T J^T footprint."""
    mu_cam = cam.to_camera(gaussians.mu)
    centers = np.stack(
        [cam.fx * mu_cam[:, 0] + cam.cx, cam.fy * mu_cam[:, 1] + cam.cy], axis=1
    )
    depths = mu_cam[:, 2].copy()

    qn, _ = _normalized_quats(gaussians.quat)
    R = quats_to_rotmats(qn)
    N = R * gaussians.scale[:, None, :]
    M = np.array([[cam.fx, 0.0, 0.0], [0.0, cam.fy, 0.0]]) @ cam.rotation  # (2,3)
    MN = np.einsum("ij,njk->nik", M, N)  # (N,2,3)
    cov2d_full = MN @ np.swapaxes(MN, 1, 2)
    cov2d = np.stack([cov2d_full[:, 0, 0], cov2d_full[:, 0, 1], cov2d_full[:, 1, 1]], axis=1)
    return np.ascontiguousarray(centers), np.ascontiguousarray(cov2d), np.ascontiguousarray(depths)


def project_gaussian(g, cam: OrthoCamera) -> ProjectedGaussian:
    """Single-Gaussian projection; footprint covariance is reported before the
    raster-time anti-alias dilation."""
    s = StaticSet.from_gaussians([g])
    centers, cov2d, depths = project_set(s, cam)
    full = np.array([[cov2d[0, 0], cov2d[0, 1]], [cov2d[0, 1], cov2d[0, 2]]])
    return ProjectedGaussian(
        center2d=(float(centers[0, 0]), float(centers[0, 1])),
        cov2d=full,
        camera_depth=float(depths[0]),
        opacity=float(g.alpha),
        color=tuple(g.color),
        source_id=(0, 0),
    )


def _sort_order(depths: np.ndarray, ids: np.ndarray) -> np.ndarray:
    # Ascending camera depth, ties broken by ascending (frame, token) id.
    return np.lexsort((ids[:, 1], ids[:, 0], depths))


def _prepare(gaussians: StaticSet, cam: OrthoCamera):
    """Project, blur, sort and bound all splats. Returns the packed kernel
    inputs in blend order plus the sort permutation and a validity mask."""
    centers, cov2d, depths = project_set(gaussians, cam)
    cov2d_blur = cov2d.copy()
    cov2d_blur[:, 0] += BLUR_FLOOR
    cov2d_blur[:, 2] += BLUR_FLOOR

    order = _sort_order(depths, gaussians.ids)
    centers = centers[order]
    cov2d_blur = cov2d_blur[order]
    depths_s = depths[order]
    opac = np.ascontiguousarray(gaussians.alpha[order])
    colors = np.ascontiguousarray(gaussians.color[order])

    a, b, c = cov2d_blur[:, 0], cov2d_blur[:, 1], cov2d_blur[:, 2]
    det = a * c - b * b
    finite = np.isfinite(a) & np.isfinite(b) & np.isfinite(c) & np.isfinite(centers).all(axis=1)
    valid = finite & (det > 0) & (a > 0) & (c > 0)
    n_skipped = int(np.sum(~valid))
    if n_skipped:
        log.warning("skipping %d splats with singular 2D covariance", n_skipped)

    conics = np.zeros_like(cov2d_blur)
    safe_det = np.where(valid, det, 1.0)
    conics[:, 0] = np.where(valid, c / safe_det, 0.0)
    conics[:, 1] = np.where(valid, -b / safe_det, 0.0)
    conics[:, 2] = np.where(valid, a / safe_det, 0.0)

    rx = 3.0 * np.sqrt(np.where(valid, a, 0.0))
    ry = 3.0 * np.sqrt(np.where(valid, c, 0.0))
    w, h = cam.width, cam.height
    x0 = np.clip(np.floor(centers[:, 0] - rx - 0.5), 0, w)
    x1 = np.clip(np.ceil(centers[:, 0] + rx - 0.5) + 1, 0, w)
    y0 = np.clip(np.floor(centers[:, 1] - ry - 0.5), 0, h)
    y1 = np.clip(np.ceil(centers[:, 1] + ry - 0.5) + 1, 0, h)
    bboxes = np.stack([x0, x1, y0, y1], axis=1)
    bboxes[~valid] = 0.0
    bboxes = np.ascontiguousarray(bboxes, dtype=np.int32)

    return centers, conics, depths_s, opac, colors, bboxes, order, valid, n_skipped


def _tile_lists(bboxes: np.ndarray, valid: np.ndarray, height: int, width: int,
                tile_size: int, naive: bool):
    """Candidate lists per tile, each slice in blend order. naive mode uses a
    single whole-image tile holding every valid splat."""
    if naive:
        tile_size = max(height, width, 1)
    ntx = (width + tile_size - 1) // tile_size
    nty = (height + tile_size - 1) // tile_size
    ntiles = ntx * nty

    idx = np.flatnonzero(valid & (bboxes[:, 0] < bboxes[:, 1]) & (bboxes[:, 2] < bboxes[:, 3]))
    if naive:
        idx = np.flatnonzero(valid)
    if idx.size == 0:
        offsets = np.zeros(ntiles + 1, dtype=np.int64)
        return offsets, np.zeros(0, dtype=np.int64), tile_size
    tx0 = bboxes[idx, 0] // tile_size
    tx1 = (bboxes[idx, 1] - 1) // tile_size + 1
    ty0 = bboxes[idx, 2] // tile_size
    ty1 = (bboxes[idx, 3] - 1) // tile_size + 1
    if naive:
        tx0 = np.zeros(idx.size, dtype=np.int64)
        tx1 = np.ones(idx.size, dtype=np.int64)
        ty0 = np.zeros(idx.size, dtype=np.int64)
        ty1 = np.ones(idx.size, dtype=np.int64)
    nx = (tx1 - tx0).astype(np.int64)
    ny = (ty1 - ty0).astype(np.int64)
    counts = nx * ny
    total = int(counts.sum())
    rep = np.repeat(np.arange(idx.size), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    within = np.arange(total) - np.repeat(starts, counts)
    lty = within // nx[rep]
    ltx = within - lty * nx[rep]
    tiles = (ty0[rep] + lty) * ntx + (tx0[rep] + ltx)
    items_global = idx[rep]
    order = np.lexsort((items_global, tiles))
    items = np.ascontiguousarray(items_global[order], dtype=np.int64)
    tiles_sorted = tiles[order]
    offsets = np.searchsorted(tiles_sorted, np.arange(ntiles + 1)).astype(np.int64)
    return np.ascontiguousarray(offsets), items, tile_size


def _forward(gaussians: StaticSet, cam: OrthoCamera, mode: str, tile_size: int,
             threads: int, backend):
    prep = _prepare(gaussians, cam)
    centers, conics, depths_s, opac, colors, bboxes, order, valid, n_skipped = prep
    offsets, items, ts = _tile_lists(bboxes, valid, cam.height, cam.width, tile_size,
                                     naive=(mode == "naive"))
    rgb, draw, acc = backend.render_forward(
        centers, conics, depths_s, opac, colors, bboxes,
        offsets, items, cam.height, cam.width, ts, threads,
    )
    return rgb, draw, acc, prep, (offsets, items, ts)


def _normalize_depth(draw: np.ndarray, acc: np.ndarray) -> np.ndarray:
    depth = np.zeros_like(draw)
    np.divide(draw, acc, out=depth, where=acc > ALPHA_NORM_EPS)
    return depth


def render(gaussians, cam: OrthoCamera, *, mode: str = "tiled",
           tile_size: int = TILE_SIZE, threads: int = 0,
           return_stats: bool = False, backend=None):
    """Rasterize static Gaussians to an ImageBuffer.

    mode "tiled" runs 16x16-tile candidate lists; "naive" feeds every splat
    to every pixel. Both produce bit-identical images. threads=0 lets the
    compiled backend pick; output is invariant to the thread count.
    """
    if mode not in ("tiled", "naive"):
        raise ValueError(f"unknown render mode {mode!r}")
    gs = _as_set(gaussians)
    if backend is None:
        backend = _kernels
    elif isinstance(backend, str):
        backend = _kernels.get_backend(backend)
    if len(gs) == 0:
        buf = ImageBuffer.zeros(cam.width, cam.height)
        if return_stats:
            return buf, RenderStats(backend=backend.BACKEND)
        return buf
    rgb, draw, acc, prep, _ = _forward(gs, cam, mode, tile_size, threads, backend)
    n_skipped = prep[8]
    buf = ImageBuffer(cam.width, cam.height, rgb, _normalize_depth(draw, acc), acc)
    if return_stats:
        stats = RenderStats(
            n_input=len(gs), n_rendered=len(gs) - n_skipped,
            n_skipped=n_skipped, backend=backend.BACKEND,
        )
        return buf, stats
    return buf


def render_at(scene, t: float, cam: OrthoCamera, **kwargs):
    """Materialize a dynamic scene at time t, then render it."""
    if not isinstance(scene, DynamicSet):
        scene = DynamicSet.from_gaussians(list(scene))
    return render(materialize_set(scene, t), cam, **kwargs)


@dataclass
class StaticGrads:
    """Loss gradients w.r.t. raw static Gaussian parameters."""

    mu: np.ndarray
    scale: np.ndarray
    quat: np.ndarray
    alpha: np.ndarray
    color: np.ndarray

    @staticmethod
    def zeros(n: int) -> "StaticGrads":
        return StaticGrads(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)),
                           np.zeros(n), np.zeros((n, 3)))


@dataclass
class DynamicGrads:
    """Loss gradients w.r.t. dynamic parameters at a fixed evaluation time."""

    mu: np.ndarray
    scale: np.ndarray
    quat: np.ndarray
    alpha: np.ndarray
    color: np.ndarray
    velocity: np.ndarray
    gamma0: np.ndarray
    gamma1: np.ndarray


def _rotmat_grad_to_quat(gR: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Chain (N,3,3) rotation-matrix gradients to (N,4) unit-quaternion grads."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = gR
    gw = 2.0 * (-g[:, 0, 1] * z + g[:, 0, 2] * y + g[:, 1, 0] * z - g[:, 1, 2] * x
                - g[:, 2, 0] * y + g[:, 2, 1] * x)
    gx = 2.0 * (g[:, 0, 1] * y + g[:, 0, 2] * z + g[:, 1, 0] * y - 2.0 * g[:, 1, 1] * x
                - g[:, 1, 2] * w + g[:, 2, 0] * z + g[:, 2, 1] * w - 2.0 * g[:, 2, 2] * x)
    gy = 2.0 * (-2.0 * g[:, 0, 0] * y + g[:, 0, 1] * x + g[:, 0, 2] * w + g[:, 1, 0] * x
                + g[:, 1, 2] * z - g[:, 2, 0] * w + g[:, 2, 1] * z - 2.0 * g[:, 2, 2] * y)
    gz = 2.0 * (-2.0 * g[:, 0, 0] * z - g[:, 0, 1] * w + g[:, 0, 2] * x + g[:, 1, 0] * w
                - 2.0 * g[:, 1, 1] * z + g[:, 1, 2] * y + g[:, 2, 0] * x + g[:, 2, 1] * y)
    return np.stack([gw, gx, gy, gz], axis=1)


def render_gradients(gaussians, cam: OrthoCamera, target, loss_fn, *,
                     mode: str = "tiled", tile_size: int = TILE_SIZE,
                     threads: int = 0, backend=None):
    """Render, evaluate loss_fn(buffer, target) and backpropagate analytically.

    loss_fn must return a LossGrad (value, per-plane gradients, breakdown);
    gradients w.r.t. the normalized depth plane are chained through the
    alpha normalization. Returns (loss value, breakdown, StaticGrads, buffer).
    """
    gs = _as_set(gaussians)
    if backend is None:
        backend = _kernels
    elif isinstance(backend, str):
        backend = _kernels.get_backend(backend)
    n = len(gs)
    if n == 0:
        buf = ImageBuffer.zeros(cam.width, cam.height)
        res = loss_fn(buf, target)
        return res.value, res.breakdown, StaticGrads.zeros(0), buf

    rgb, draw, acc, prep, tiles = _forward(gs, cam, mode, tile_size, threads, backend)
    centers, conics, depths_s, opac, colors, bboxes, order, valid, _ = prep
    offsets, items, ts = tiles
    depth = _normalize_depth(draw, acc)
    buf = ImageBuffer(cam.width, cam.height, rgb, depth, acc)

    res = loss_fn(buf, target)
    grad_rgb = res.grad_rgb if res.grad_rgb is not None else np.zeros_like(rgb)
    grad_alpha = res.grad_alpha if res.grad_alpha is not None else np.zeros_like(acc)
    grad_alpha = np.array(grad_alpha, dtype=np.float64, copy=True)
    grad_draw = np.zeros_like(draw)
    if res.grad_depth is not None:
        covered = acc > ALPHA_NORM_EPS
        np.divide(res.grad_depth, acc, out=grad_draw, where=covered)
        grad_alpha -= np.where(covered, grad_draw * depth, 0.0)
    grad_rgb = np.ascontiguousarray(grad_rgb, dtype=np.float64)
    grad_draw = np.ascontiguousarray(grad_draw)
    grad_alpha = np.ascontiguousarray(grad_alpha)

    g_centers, g_conics, g_depths, g_opac, g_colors = backend.render_backward(
        centers, conics, depths_s, opac, colors, bboxes,
        offsets, items, cam.height, cam.width, ts,
        np.ascontiguousarray(rgb), np.ascontiguousarray(draw), np.ascontiguousarray(acc),
        grad_rgb, grad_draw, grad_alpha,
    )

    # Back out of the blend-order permutation.
    inv = np.empty_like(order)
    inv[order] = np.arange(n)
    g_centers = g_centers[inv]
    g_conics = g_conics[inv]
    g_depths = g_depths[inv]
    g_opac = g_opac[inv]
    g_colors = g_colors[inv]
    valid_u = valid[inv]

    # conic -> blurred cov2d: conic = inv(cov2d), so dL/dcov = -A G A.
    a, b, c = g_conics[:, 0], g_conics[:, 1], g_conics[:, 2]
    G_conic = np.empty((n, 2, 2))
    G_conic[:, 0, 0] = a
    G_conic[:, 0, 1] = b / 2.0
    G_conic[:, 1, 0] = b / 2.0
    G_conic[:, 1, 1] = c
    con = conics[inv]  # conic values back in input order
    A = np.empty((n, 2, 2))
    A[:, 0, 0] = con[:, 0]
    A[:, 0, 1] = con[:, 1]
    A[:, 1, 0] = con[:, 1]
    A[:, 1, 1] = con[:, 2]
    G_cov = -A @ G_conic @ A  # (N,2,2), symmetric

    # cov2d = M Sigma M^T (+ blur on the diagonal): dL/dSigma = M^T G_cov M.
    M = np.array([[cam.fx, 0.0, 0.0], [0.0, cam.fy, 0.0]]) @ cam.rotation
    G_sigma = np.einsum("ai,nab,bj->nij", M, G_cov, M)

    # Sigma = N N^T, N = R diag(s).
    qn, qnorm = _normalized_quats(gs.quat)
    R = quats_to_rotmats(qn)
    Nmat = R * gs.scale[:, None, :]
    G_N = 2.0 * (G_sigma @ Nmat)
    g_scale = np.einsum("nrk,nrk->nk", G_N, R)
    G_R = G_N * gs.scale[:, None, :]
    g_qhat = _rotmat_grad_to_quat(G_R, qn)
    # Through normalization q_hat = q / |q|.
    g_quat = (g_qhat - np.sum(g_qhat * qn, axis=1, keepdims=True) * qn) / qnorm[:, None]

    # Center and blend-depth into camera coordinates, then to canonical mu.
    g_mu_cam = np.stack(
        [cam.fx * g_centers[:, 0], cam.fy * g_centers[:, 1], g_depths], axis=1
    )
    g_mu = g_mu_cam @ cam.rotation

    z = ~valid_u
    if np.any(z):
        for arr in (g_mu, g_scale, g_quat, g_colors):
            arr[z] = 0.0
        g_opac[z] = 0.0

    grads = StaticGrads(mu=g_mu, scale=g_scale, quat=g_quat, alpha=g_opac, color=g_colors)
    return res.value, res.breakdown, grads, buf


def render_gradients_dynamic(scene: DynamicSet, t: float, cam: OrthoCamera, target,
                             loss_fn, **kwargs):
    """render_gradients through materialize: gradients reach the base
    parameters and the deformation (velocity, gamma0, gamma1)."""
    mat = materialize_set(scene, t)
    value, breakdown, sg, buf = render_gradients(mat, cam, target, loss_fn, **kwargs)
    d = scene.deform
    dt = t - d.t0
    _, ratio, dval_dg0, dval_dg1 = opacity_at_with_grads(
        scene.base.alpha, d.gamma0, d.gamma1, d.t0, t
    )
    grads = DynamicGrads(
        mu=sg.mu,
        scale=sg.scale,
        quat=sg.quat,
        alpha=sg.alpha * ratio,
        color=sg.color,
        velocity=sg.mu * dt[:, None],
        gamma0=sg.alpha * dval_dg0,
        gamma1=sg.alpha * dval_dg1,
    )
    return value, breakdown, grads, buf
