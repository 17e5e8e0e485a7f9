"""Objectives and image metrics.

Photometric MSE, PSNR, SSIM, the scale/shift-invariant depth loss built on
median/MAD normalization, the masked auxiliary loss, the adaptive depth
weight, and the combined static/dynamic objectives. Each loss used by the
fitter has a *_grad twin returning analytic gradients w.r.t. the rendered
planes; the adaptive depth weight is treated as a constant during
backpropagation (its derivative would feed the loss back into itself).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DegenerateDepth, ShapeError

_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_SIGMA = 1.5
_SSIM_WIN = 11
_MAD_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_mse: float = 1.0
    lambda_depth: float = 0.05
    lambda_mask: float = 3.0
    w: float = 1.0  # decay sensitivity of the adaptive depth weight

    def __post_init__(self):
        if self.lambda_mse < 0 or self.lambda_depth < 0 or self.lambda_mask < 0:
            raise ValueError("loss weights must be non-negative")
        if self.w <= 0:
            raise ValueError("decay sensitivity w must be positive")


@dataclass(frozen=True)
class FrameTarget:
    """Supervision for one frame: rgb, optional depth plane and binary mask."""

    rgb: np.ndarray
    depth: np.ndarray | None = None
    mask: np.ndarray | None = None


@dataclass
class LossGrad:
    """A loss value with gradients w.r.t. the rendered planes."""

    value: float
    grad_rgb: np.ndarray | None = None
    grad_depth: np.ndarray | None = None
    grad_alpha: np.ndarray | None = None
    breakdown: dict = field(default_factory=dict)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def mse_grad(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    diff = a - b
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def psnr(a, b, max_val: float = 1.0) -> float:
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(max_val * max_val / err))


def _ssim_plane(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    pad = (_SSIM_WIN - 1) // 2
    if min(a.shape[:2]) < _SSIM_WIN:
        raise ShapeError(f"images must be at least {_SSIM_WIN}px per side for ssim")
    # truncate chosen so the Gaussian window radius is exactly `pad` pixels
    filt = dict(sigma=_SSIM_SIGMA, truncate=3.5)
    ux = gaussian_filter(a, **filt)
    uy = gaussian_filter(b, **filt)
    uxx = gaussian_filter(a * a, **filt)
    uyy = gaussian_filter(b * b, **filt)
    uxy = gaussian_filter(a * b, **filt)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy
    c1 = (_SSIM_K1 * data_range) ** 2
    c2 = (_SSIM_K2 * data_range) ** 2
    s = ((2.0 * ux * uy + c1) * (2.0 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    return float(np.mean(s[pad:-pad, pad:-pad]))


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), averaged
    over channels for 3D inputs. Window borders are cropped from the mean."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    if a.ndim == 2:
        return _ssim_plane(a, b, data_range)
    if a.ndim == 3:
        return float(np.mean([_ssim_plane(a[..., k], b[..., k], data_range)
                              for k in range(a.shape[2])]))
    raise ShapeError(f"ssim expects 2D or 3D arrays, got shape {a.shape}")


def _valid_values(d: np.ndarray, valid_mask):
    if valid_mask is None:
        return d.ravel()
    valid_mask = np.asarray(valid_mask, dtype=bool)
    _check_same_shape(np.empty(valid_mask.shape), d)
    return d[valid_mask]


def tau_normalize(d, valid_mask=None) -> np.ndarray:
    """Scale/shift-invariant normalization (x - median) / mean|x - median|.

    Statistics come from the valid pixels; the whole plane is normalized.
    Raises DegenerateDepth when fewer than 2 valid pixels or the mean
    absolute deviation is below 1e-12.
    """
    d = np.asarray(d, dtype=np.float64)
    vals = _valid_values(d, valid_mask)
    if vals.size < 2:
        raise DegenerateDepth("need at least 2 valid pixels to normalize")
    med = float(np.median(vals))
    mad = float(np.mean(np.abs(vals - med)))
    if mad <= _MAD_EPS:
        raise DegenerateDepth(f"depth plane deviation {mad:g} too small to normalize")
    return (d - med) / mad


def depth_loss(d_hat, d_ref, valid_mask=None) -> float:
    """Mean absolute difference of the tau-normalized planes over valid pixels."""
    d_hat = np.asarray(d_hat, dtype=np.float64)
    d_ref = np.asarray(d_ref, dtype=np.float64)
    _check_same_shape(d_hat, d_ref)
    th = tau_normalize(d_hat, valid_mask)
    tr = tau_normalize(d_ref, valid_mask)
    diff = np.abs(th - tr)
    if valid_mask is not None:
        return float(np.mean(diff[np.asarray(valid_mask, dtype=bool)]))
    return float(np.mean(diff))


def _median_pivots(vals: np.ndarray):
    """Indices (into vals) realizing the median and their weights."""
    n = vals.size
    order = np.argsort(vals, kind="stable")
    if n % 2:
        return order[n // 2 : n // 2 + 1], np.array([1.0])
    mid = order[n // 2 - 1 : n // 2 + 1]
    return mid, np.array([0.5, 0.5])


def depth_loss_grad(d_hat, d_ref, valid_mask=None):
    """depth_loss plus its gradient w.r.t. d_hat (d_ref held fixed).

    The median and mean-absolute-deviation are differentiated through their
    subgradients; sign(0) contributes 0.
    """
    d_hat = np.asarray(d_hat, dtype=np.float64)
    d_ref = np.asarray(d_ref, dtype=np.float64)
    _check_same_shape(d_hat, d_ref)
    if valid_mask is None:
        vmask = np.ones(d_hat.shape, dtype=bool)
    else:
        vmask = np.asarray(valid_mask, dtype=bool)
    x = d_hat[vmask]
    y_full = tau_normalize(d_ref, valid_mask)
    y = y_full[vmask]
    n = x.size
    if n < 2:
        raise DegenerateDepth("need at least 2 valid pixels to normalize")
    med = float(np.median(x))
    dev = x - med
    mad = float(np.mean(np.abs(dev)))
    if mad <= _MAD_EPS:
        raise DegenerateDepth(f"depth plane deviation {mad:g} too small to normalize")
    tau = dev / mad
    resid = tau - y
    value = float(np.mean(np.abs(resid)))

    r = np.sign(resid) / n  # dL/dtau
    piv_idx, piv_w = _median_pivots(x)
    sgn = np.sign(dev)
    # s = mean|x - med|: ds/dx_j = sgn_j/n - (mean sgn) * dmed/dx_j
    sum_r = float(np.sum(r))
    sum_rtau = float(np.sum(r * tau))
    g = r / mad
    dmed = np.zeros(n)
    dmed[piv_idx] = piv_w
    mean_sgn = float(np.mean(sgn))
    ds = sgn / n - mean_sgn * dmed
    g -= (sum_r / mad) * dmed
    g -= (sum_rtau / mad) * ds

    grad = np.zeros_like(d_hat)
    grad[vmask] = g
    return value, grad


def adaptive_depth_weight(weights: LossWeights, current_depth_loss: float) -> float:
    """lambda_depth * sigmoid(-L / w): halves the weight at L = 0 and decays
    it as the depth loss grows."""
    x = -float(current_depth_loss) / weights.w
    if x >= 0:
        s = 1.0 / (1.0 + np.exp(-x))
    else:
        e = np.exp(x)
        s = e / (1.0 + e)
    return float(weights.lambda_depth * s)


def masked_loss(a, b, mask) -> float:
    """MSE restricted to mask support; 0 when the mask is empty.

    A 2D mask applies to every channel of 3D inputs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape[: m.ndim]:
        raise ShapeError(f"mask shape {m.shape} does not match images {a.shape}")
    if a.ndim == 3 and m.ndim == 2:
        m = np.broadcast_to(m[:, :, None], a.shape)
    if not m.any():
        return 0.0
    return float(np.mean(((a - b) ** 2)[m]))


def masked_loss_grad(a, b, mask):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape[: m.ndim]:
        raise ShapeError(f"mask shape {m.shape} does not match images {a.shape}")
    if a.ndim == 3 and m.ndim == 2:
        m = np.broadcast_to(m[:, :, None], a.shape)
    count = int(np.sum(m))
    if count == 0:
        return 0.0, np.zeros_like(a)
    diff = np.where(m, a - b, 0.0)
    value = float(np.mean((diff**2)[m]))
    return value, 2.0 * diff / count


def total_static_loss(rendered, target: FrameTarget, weights: LossWeights,
                      mask=None, depth_valid=None, adaptive: bool = True):
    """Weighted photometric + adaptive-weight depth + masked objective.

    Returns (total, breakdown). The depth term uses adaptive_depth_weight in
    place of the raw lambda_depth. mask overrides target.mask when given.
    """
    res = total_static_loss_grad(rendered, target, weights, mask=mask,
                                 depth_valid=depth_valid, need_grads=False,
                                 adaptive=adaptive)
    return res.value, res.breakdown


def total_static_loss_grad(rendered, target: FrameTarget, weights: LossWeights,
                           mask=None, depth_valid=None, need_grads: bool = True,
                           adaptive: bool = True,
                           depth_weight_override: float | None = None) -> LossGrad:
    rgb = rendered.rgb
    mse_val, g_rgb = mse_grad(rgb, target.rgb)
    total = weights.lambda_mse * mse_val
    grad_rgb = weights.lambda_mse * g_rgb if need_grads else None
    breakdown = {"mse": mse_val, "depth": 0.0, "depth_weight": 0.0, "mask": 0.0}

    grad_depth = None
    if target.depth is not None and weights.lambda_depth > 0:
        d_val, g_d = depth_loss_grad(rendered.depth, target.depth, valid_mask=depth_valid)
        # the weight is a constant to the gradient (no chain through lam_hat);
        # an override pins it so a whole descent run optimizes one objective
        if depth_weight_override is not None:
            lam_hat = depth_weight_override
        elif adaptive:
            lam_hat = adaptive_depth_weight(weights, d_val)
        else:
            lam_hat = weights.lambda_depth
        breakdown["depth"] = d_val
        breakdown["depth_weight"] = lam_hat
        total += lam_hat * d_val
        if need_grads:
            grad_depth = lam_hat * g_d

    use_mask = mask if mask is not None else target.mask
    if use_mask is not None and weights.lambda_mask > 0:
        m_val, g_m = masked_loss_grad(rgb, target.rgb, use_mask)
        breakdown["mask"] = m_val
        total += weights.lambda_mask * m_val
        if need_grads and grad_rgb is not None:
            grad_rgb = grad_rgb + weights.lambda_mask * g_m

    breakdown["total"] = total
    return LossGrad(value=total, grad_rgb=grad_rgb, grad_depth=grad_depth,
                    grad_alpha=None, breakdown=breakdown)


def total_dynamic_loss(rendered_frames, targets, weights: LossWeights, masks=None):
    """Mean of the static objective over a sampled set of times.

    rendered_frames and targets are aligned sequences; masks optional.
    """
    if len(rendered_frames) != len(targets):
        raise ShapeError("rendered/target counts differ")
    if not rendered_frames:
        return 0.0, {"mse": 0.0, "depth": 0.0, "depth_weight": 0.0, "mask": 0.0, "total": 0.0}
    totals = []
    agg: dict[str, float] = {}
    for i, (buf, tgt) in enumerate(zip(rendered_frames, targets)):
        m = masks[i] if masks is not None else None
        val, br = total_static_loss(buf, tgt, weights, mask=m)
        totals.append(val)
        for k, v in br.items():
            agg[k] = agg.get(k, 0.0) + v
    n = len(totals)
    return float(np.mean(totals)), {k: v / n for k, v in agg.items()}


def intermediate_times(t_start: float, t_end: float, n: int = 5) -> np.ndarray:
    """Uniform grid of n times in [t_start, t_end], endpoints included."""
    if n < 2:
        return np.array([0.5 * (t_start + t_end)])
    return np.linspace(t_start, t_end, n)
