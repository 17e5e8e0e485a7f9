"""Gradient-descent scene fitting.

Two stages mirror the streaming engine's needs. encode() fits static
Gaussians anchored on a token grid to one RGB-D frame. decode() fits
bidirectional deformations (velocity + opacity lifecycle per Gaussian) for a
pair of fitted frames, supervising the fused set at both endpoints.

The optimizer is projected gradient descent with step-halving on any loss
increase, so the accepted-loss sequence is monotone non-increasing. Bounded
quantities (position offsets, velocities) are clipped back into their boxes
after every step; positivity and range constraints on the remaining
parameters are enforced through exp/sigmoid reparameterizations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .camera import OrthoCamera
from .deform import depth_map, depth_map_grad, pixel_aligned_position
from .errors import DegenerateDepth, FitDiverged
from .losses import (FrameTarget, LossWeights, adaptive_depth_weight,
                     depth_loss, total_static_loss_grad)
from .model import MIN_SCALE, DeformSet, DynamicSet, StaticSet
from .render import render, render_at, render_gradients, render_gradients_dynamic
from .sampling import TruncNormalParams, deterministic_offset, sample_truncnorm

log = logging.getLogger("dynsplat.fit")

_RAW_BOUND = 8.0  # logit-space box for opacity/color
_LOG_SCALE_LO = float(np.log(MIN_SCALE))
_LOG_SCALE_HI = 0.0  # scales capped at ~1 canonical unit
_LOG_GAMMA0_LO = float(np.log(0.1))
_LOG_GAMMA0_HI = float(np.log(500.0))

# Relative step sizes per parameter group, applied on top of the shared
# learning rate. Color/opacity live in logit space and tolerate large steps;
# geometry is touchier.
_GROUP_SCALES = {
    "offset": 1.0,
    "lscale": 0.4,
    "quat": 0.4,
    "ralpha": 4.0,
    "rcolor": 8.0,
    "fvel": 1.0,
    "bvel": 1.0,
    "flg0": 1.0,
    "blg0": 1.0,
    "fg1raw": 2.0,
    "bg1raw": 2.0,
}


@dataclass(frozen=True)
class FitConfig:
    """Fitting hyperparameters shared by the encode and decode stages."""

    grid: tuple | None = None          # token grid (nx, ny); None derives from cell_px
    n_gaussians: int | None = None     # alternative to grid; factored to match aspect
    cell_px: int = 16
    iterations: int = 500
    decode_iterations: int = 300
    step_size: float = 0.05
    k_candidates: int = 8
    tolerance: float = 0.0             # stop when the loss decrease falls below this
    init_std: float = 0.5              # xy candidate spread, in grid-cell units
    init_z_std: float = 0.5            # z candidate spread, in canonical units
    init_alpha: float = 0.6
    init_scale_z: float = 0.05
    deterministic_init: bool = False
    n_times: int = 5                   # intermediate-time grid for dynamic evaluation
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def __post_init__(self):
        if self.iterations <= 0 or self.decode_iterations <= 0:
            raise ValueError("iteration counts must be positive")
        if self.k_candidates < 1:
            raise ValueError("k_candidates must be at least 1")
        if self.n_gaussians is not None and self.n_gaussians <= 0:
            raise ValueError("n_gaussians must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")


def resolve_grid(cfg: FitConfig, width: int, height: int) -> tuple[int, int]:
    """Token grid dimensions for a frame: explicit grid wins, then a
    divisor factorization of n_gaussians closest to the image aspect, then
    one token per cell_px x cell_px patch."""
    if cfg.grid is not None:
        nx, ny = int(cfg.grid[0]), int(cfg.grid[1])
        if nx <= 0 or ny <= 0:
            raise ValueError("grid dimensions must be positive")
        return nx, ny
    if cfg.n_gaussians is not None:
        n = cfg.n_gaussians
        target = width / height
        best = (n, 1)
        best_err = float("inf")
        for nx in range(1, n + 1):
            if n % nx:
                continue
            ny = n // nx
            err = abs(np.log(nx / ny) - np.log(target))
            if err < best_err:
                best, best_err = (nx, ny), err
        return best
    return max(1, width // cfg.cell_px), max(1, height // cfg.cell_px)


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def _logit(p):
    p = np.clip(p, 1e-6, 1.0 - 1e-6)
    return np.log(p / (1.0 - p))


@dataclass
class FitResult:
    loss: float
    breakdown: dict
    curve: list
    n_iter: int
    depth_weights: list  # effective adaptive depth weight per accepted iteration


_RMS_BETA = 0.9
_RMS_EPS = 1e-8


def _col_ms(g: np.ndarray):
    """Mean-square gradient per column (scalar for 1-D parameter arrays)."""
    if g.ndim == 1:
        return np.mean(g * g)
    return np.mean(g * g, axis=0)


def _descend(params: dict, eval_fn, project_fn, iterations: int, step0: float,
             tolerance: float, curve_offset: int = 0):
    """Shared projected-GD loop. eval_fn(params) -> (value, breakdown, grads);
    project_fn(params) clips in place. Returns (params, FitResult).

    Directions are the gradients rescaled by a running per-column RMS.
    Scaling whole columns by positive constants keeps them descent
    directions while equalizing step sizes across parameter groups;
    per-element scaling would turn noise-level gradients into full-size
    moves. A step is accepted only if the loss strictly decreases,
    otherwise it is halved. Accepted losses are therefore monotone
    decreasing. When every halving fails the RMS state is rebuilt from the
    current gradient once before giving up, in case the running average
    went stale.
    """
    params = project_fn({k: v.copy() for k, v in params.items()})
    value, breakdown, grads = eval_fn(params)
    if not np.isfinite(value):
        raise FitDiverged(f"initial loss is not finite: {value}")
    rms = {k: _col_ms(g) for k, g in grads.items()}
    lr = step0
    curve = [(curve_offset, value, breakdown.get("mse", 0.0), breakdown.get("depth", 0.0),
              breakdown.get("mask", 0.0))]
    depth_weights = [breakdown.get("depth_weight", 0.0)]
    n_done = 0
    retried = False
    for it in range(1, iterations + 1):
        direction = {k: grads[k] / (np.sqrt(rms[k]) + _RMS_EPS) for k in params}
        accepted = False
        for _ in range(24):
            cand = project_fn({
                k: params[k] - lr * _GROUP_SCALES.get(k, 1.0) * direction[k]
                for k in params
            })
            v2, b2, g2 = eval_fn(cand)
            if np.isfinite(v2) and v2 < value:
                accepted = True
                break
            lr *= 0.5
        if not accepted:
            if retried:
                break
            retried = True
            rms = {k: _col_ms(g) for k, g in grads.items()}
            lr = step0
            continue
        retried = False
        drop = value - v2
        params, value, breakdown, grads = cand, v2, b2, g2
        rms = {k: _RMS_BETA * rms[k] + (1.0 - _RMS_BETA) * _col_ms(grads[k])
               for k in params}
        lr = min(lr * 1.25, step0)
        curve.append((curve_offset + it, value, breakdown.get("mse", 0.0),
                      breakdown.get("depth", 0.0), breakdown.get("mask", 0.0)))
        depth_weights.append(breakdown.get("depth_weight", 0.0))
        n_done = it
        if drop < tolerance:
            break
    return params, FitResult(loss=value, breakdown=breakdown, curve=curve,
                             n_iter=n_done, depth_weights=depth_weights)


def _static_from_params(params: dict, anchors: np.ndarray, ids: np.ndarray) -> StaticSet:
    mu = pixel_aligned_position(anchors[:, 0], anchors[:, 1], params["offset"])
    scale = MIN_SCALE + np.exp(params["lscale"])
    alpha = _sigmoid(params["ralpha"])
    color = _sigmoid(params["rcolor"])
    return StaticSet(mu, scale, params["quat"], alpha, color, ids)


def _static_param_grads(params: dict, sg) -> dict:
    alpha = _sigmoid(params["ralpha"])
    color = _sigmoid(params["rcolor"])
    g_off = sg.mu.copy()
    g_off[:, 2] = sg.mu[:, 2] * depth_map_grad(params["offset"][:, 2])
    return {
        "offset": g_off,
        "lscale": sg.scale * np.exp(params["lscale"]),
        "quat": sg.quat,
        "ralpha": sg.alpha * alpha * (1.0 - alpha),
        "rcolor": sg.color * color * (1.0 - color),
    }


def _project_static(params: dict) -> dict:
    np.clip(params["offset"], -1.0, 1.0, out=params["offset"])
    np.clip(params["lscale"], _LOG_SCALE_LO, _LOG_SCALE_HI, out=params["lscale"])
    np.clip(params["ralpha"], -_RAW_BOUND, _RAW_BOUND, out=params["ralpha"])
    np.clip(params["rcolor"], -_RAW_BOUND, _RAW_BOUND, out=params["rcolor"])
    q = params["quat"]
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    bad = norms[:, 0] < 1e-6
    if np.any(bad):
        q[bad] = np.array([1.0, 0.0, 0.0, 0.0])
        norms[bad] = 1.0
    params["quat"] = q / norms
    return params


def _coverage(buf) -> np.ndarray:
    # pixels whose blended depth is meaningful (alpha above the
    # normalization floor); uncovered pixels hold a zero placeholder and
    # must not enter the scale/shift-invariant depth term
    return buf.alpha > 1e-6


def _guarded_loss(buf, target: FrameTarget, weights: LossWeights,
                  depth_weight: float | None = None):
    """Static objective with the depth term restricted to covered pixels,
    dropped entirely whenever either plane is too degenerate to
    tau-normalize (e.g. nothing rendered yet)."""
    try:
        return total_static_loss_grad(buf, target, weights,
                                      depth_valid=_coverage(buf),
                                      depth_weight_override=depth_weight)
    except DegenerateDepth:
        stripped = FrameTarget(target.rgb, None, target.mask)
        return total_static_loss_grad(buf, stripped, weights,
                                      depth_weight_override=depth_weight)


def _frozen_depth_weight(bufs, targets, weights: LossWeights) -> float | None:
    """Adaptive depth weight evaluated once on the initial state, then held
    fixed so one descent run minimizes a single objective (keeps the
    accepted-loss sequence monotone and the analytic gradient exact)."""
    if weights.lambda_depth <= 0:
        return None
    vals = []
    for buf, tgt in zip(bufs, targets):
        if tgt.depth is None:
            continue
        try:
            vals.append(depth_loss(buf.depth, tgt.depth, valid_mask=_coverage(buf)))
        except DegenerateDepth:
            continue
    if not vals:
        return None
    return adaptive_depth_weight(weights, float(np.mean(vals)))


def _nearest_pixel(px: np.ndarray, size: int) -> np.ndarray:
    return np.clip(np.floor(px).astype(np.int64), 0, size - 1)


def _init_offsets(cfg: FitConfig, cam: OrthoCamera, anchors: np.ndarray,
                  target: FrameTarget, rng: np.random.Generator,
                  cell: float) -> np.ndarray:
    """Position offsets per token: K truncated-normal candidates scored by
    how well the implied depth matches the target depth at the candidate's
    pixel; lowest error wins. xy candidates stay within their token's
    neighborhood while z spans the whole depth range, so the selection
    resolves which depth layer each token belongs to. deterministic_init
    short-circuits to the clamped mean."""
    n = anchors.shape[0]
    xy_std = cfg.init_std * cell
    dist = TruncNormalParams((0.0, 0.0, 0.0), (xy_std, xy_std, cfg.init_z_std))
    if cfg.deterministic_init:
        return np.tile(deterministic_offset(dist), (n, 1))
    k = cfg.k_candidates
    cands = sample_truncnorm(dist, rng, size=n * k).reshape(n, k, 3)
    if target.depth is None:
        return cands[:, 0, :].copy()
    u = anchors[:, 0:1] + cands[:, :, 0]
    v = anchors[:, 1:2] + cands[:, :, 1]
    px = _nearest_pixel(cam.fx * u + cam.cx, cam.width)
    py = _nearest_pixel(cam.fy * v + cam.cy, cam.height)
    d_tgt = np.asarray(target.depth, dtype=np.float64)[py, px]
    err = (depth_map(cands[:, :, 2]) - d_tgt) ** 2
    best = np.argmin(err, axis=1)
    return cands[np.arange(n), best, :].copy()


def encode(target: FrameTarget, cam: OrthoCamera, cfg: FitConfig,
           frame_index: int = 0, rng: np.random.Generator | None = None,
           threads: int = 0):
    """Fit token-anchored static Gaussians to one frame.

    Returns (StaticSet, FitResult). Deterministic given (target, cfg, seed):
    the candidate RNG is derived from (cfg.seed, frame_index) when rng is
    not supplied.
    """
    if rng is None:
        rng = np.random.default_rng([cfg.seed, frame_index])
    h, w = np.asarray(target.rgb).shape[:2]
    if (h, w) != (cam.height, cam.width):
        raise ValueError(f"frame is {w}x{h} but camera expects {cam.width}x{cam.height}")
    nx, ny = resolve_grid(cfg, cam.width, cam.height)
    n = nx * ny
    anchors = cam.pixel_anchor_grid(nx, ny)
    ids = np.stack([np.full(n, frame_index, dtype=np.int64),
                    np.arange(n, dtype=np.int64)], axis=1)

    cell = 2.0 / max(nx, ny)
    offsets = _init_offsets(cfg, cam, anchors, target, rng, cell)
    px = _nearest_pixel(cam.fx * (anchors[:, 0] + offsets[:, 0]) + cam.cx, cam.width)
    py = _nearest_pixel(cam.fy * (anchors[:, 1] + offsets[:, 1]) + cam.cy, cam.height)
    rgb0 = np.asarray(target.rgb, dtype=np.float64)[py, px]

    lscale = np.tile(np.log([0.75 * cell, 0.75 * cell, cfg.init_scale_z]), (n, 1))
    params = {
        "offset": offsets,
        "lscale": lscale,
        "quat": np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
        "ralpha": np.full(n, _logit(cfg.init_alpha)),
        "rcolor": _logit(rgb0),
    }

    lam0 = _frozen_depth_weight(
        [render(_static_from_params(params, anchors, ids), cam, threads=threads)],
        [target], cfg.weights)

    def eval_fn(p):
        static = _static_from_params(p, anchors, ids)
        value, breakdown, sg, _ = render_gradients(
            static, cam, target,
            lambda buf, t: _guarded_loss(buf, t, cfg.weights, lam0),
            threads=threads,
        )
        return value, breakdown, _static_param_grads(p, sg)

    params, result = _descend(params, eval_fn, _project_static,
                              cfg.iterations, cfg.step_size, cfg.tolerance)
    return _static_from_params(params, anchors, ids), result


def _deforms_from_params(params: dict, n_prev: int, n_cur: int,
                         t_prev: float, t_cur: float) -> tuple[DeformSet, DeformSet]:
    fwd = DeformSet(params["fvel"], np.exp(params["flg0"]), _sigmoid(params["fg1raw"]),
                    np.full(n_prev, t_prev))
    bwd = DeformSet(params["bvel"], np.exp(params["blg0"]), _sigmoid(params["bg1raw"]),
                    np.full(n_cur, t_cur))
    return fwd, bwd


def _project_deform(params: dict) -> dict:
    np.clip(params["fvel"], -1.0, 1.0, out=params["fvel"])
    np.clip(params["bvel"], -1.0, 1.0, out=params["bvel"])
    np.clip(params["flg0"], _LOG_GAMMA0_LO, _LOG_GAMMA0_HI, out=params["flg0"])
    np.clip(params["blg0"], _LOG_GAMMA0_LO, _LOG_GAMMA0_HI, out=params["blg0"])
    np.clip(params["fg1raw"], -_RAW_BOUND, _RAW_BOUND, out=params["fg1raw"])
    np.clip(params["bg1raw"], -_RAW_BOUND, _RAW_BOUND, out=params["bg1raw"])
    return params


def decode(prev_static: StaticSet, prev_target: FrameTarget,
           cur_static: StaticSet, cur_target: FrameTarget,
           cam: OrthoCamera, cfg: FitConfig,
           intermediate: list | None = None, threads: int = 0):
    """Fit bidirectional deformations over the local interval [0, 1].

    The fused set (previous Gaussians with a forward field anchored at t0=0,
    current Gaussians with a backward field anchored at t0=1) is rendered at
    both endpoints (plus any provided (t, target) pairs) and the mean static
    objective is minimized over velocities and lifecycle coefficients only.

    Returns (forward DeformSet, backward DeformSet, FitResult).
    """
    n_prev, n_cur = len(prev_static), len(cur_static)
    supervised = [(0.0, prev_target), (1.0, cur_target)] + list(intermediate or [])

    params = {
        "fvel": np.zeros((n_prev, 3)),
        "bvel": np.zeros((n_cur, 3)),
        "flg0": np.full(n_prev, np.log(4.0)),
        "blg0": np.full(n_cur, np.log(4.0)),
        "fg1raw": np.full(n_prev, _logit(0.5)),
        "bg1raw": np.full(n_cur, _logit(0.5)),
    }

    base = StaticSet(
        np.concatenate([prev_static.mu, cur_static.mu]),
        np.concatenate([prev_static.scale, cur_static.scale]),
        np.concatenate([prev_static.quat, cur_static.quat]),
        np.concatenate([prev_static.alpha, cur_static.alpha]),
        np.concatenate([prev_static.color, cur_static.color]),
        np.concatenate([prev_static.ids, cur_static.ids]),
    )

    def fused_scene(p):
        fwd, bwd = _deforms_from_params(p, n_prev, n_cur, 0.0, 1.0)
        return DynamicSet(base, DeformSet(
            np.concatenate([fwd.velocity, bwd.velocity]),
            np.concatenate([fwd.gamma0, bwd.gamma0]),
            np.concatenate([fwd.gamma1, bwd.gamma1]),
            np.concatenate([fwd.t0, bwd.t0]),
        ))

    init_scene = fused_scene(params)
    lam0 = _frozen_depth_weight(
        [render_at(init_scene, t, cam, threads=threads) for t, _ in supervised],
        [tgt for _, tgt in supervised], cfg.weights)

    def eval_fn(p):
        scene = fused_scene(p)
        total = 0.0
        agg: dict[str, float] = {}
        g = {k: np.zeros_like(v) for k, v in p.items()}
        for t, tgt in supervised:
            value, breakdown, dg, _ = render_gradients_dynamic(
                scene, t, cam, tgt,
                lambda buf, tt: _guarded_loss(buf, tt, cfg.weights, lam0),
                threads=threads,
            )
            total += value
            for key, val in breakdown.items():
                agg[key] = agg.get(key, 0.0) + val
            g["fvel"] += dg.velocity[:n_prev]
            g["bvel"] += dg.velocity[n_prev:]
            g["flg0"] += dg.gamma0[:n_prev] * np.exp(p["flg0"])
            g["blg0"] += dg.gamma0[n_prev:] * np.exp(p["blg0"])
            s_f = _sigmoid(p["fg1raw"])
            s_b = _sigmoid(p["bg1raw"])
            g["fg1raw"] += dg.gamma1[:n_prev] * s_f * (1.0 - s_f)
            g["bg1raw"] += dg.gamma1[n_prev:] * s_b * (1.0 - s_b)
        m = len(supervised)
        for k in g:
            g[k] /= m
        return total / m, {k: v / m for k, v in agg.items()}, g

    params, result = _descend(params, eval_fn, _project_deform,
                              cfg.decode_iterations, cfg.step_size, cfg.tolerance)
    fwd, bwd = _deforms_from_params(params, n_prev, n_cur, 0.0, 1.0)
    return fwd, bwd, result
