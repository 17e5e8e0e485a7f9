"""Truncated-normal sampling on [-1, 1] for position offsets and velocities.

Sampling is inverse-CDF per axis: u ~ Uniform(Phi((-1-m)/s), Phi((1-m)/s)),
sample = m + s * Phi^-1(u). Bounded worst-case cost even when the mean lies
far outside the interval, and bit-reproducible from a seeded Generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

LO, HI = -1.0, 1.0

# Below this std the distribution collapses to the clamped mean.
STD_FLOOR = 1e-9


@dataclass(frozen=True)
class TruncNormalParams:
    """Per-axis mean and std of the pre-truncation normal."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ValueError(f"std components must be positive, got {self.std}")


def _as_params(p: TruncNormalParams) -> tuple[np.ndarray, np.ndarray]:
    mean = np.asarray(p.mean, dtype=np.float64)
    std = np.maximum(np.asarray(p.std, dtype=np.float64), STD_FLOOR)
    return mean, std


def sample_truncnorm(p: TruncNormalParams, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw from N(mean, std^2) truncated to [-1, 1], componentwise.

    Returns shape (3,) or (size, 3). Every component lies strictly inside
    the closed cube for any parameters.
    """
    mean, std = _as_params(p)
    shape = (3,) if size is None else (size, 3)
    lo_cdf = ndtr((LO - mean) / std)
    hi_cdf = ndtr((HI - mean) / std)
    u = rng.random(shape)
    q = lo_cdf + u * (hi_cdf - lo_cdf)
    # Degenerate tails: when both CDF bounds coincide (mean many sigma outside
    # the interval, or vanishing std) ndtri would see 0 or 1; clamp instead.
    x = mean + std * ndtri(np.clip(q, 1e-300, 1.0 - 1e-16))
    out = np.clip(x, LO, HI)
    bad = ~np.isfinite(x)
    if np.any(bad):
        out = np.where(bad, np.clip(np.broadcast_to(mean, shape), LO, HI), out)
    return out


def deterministic_offset(p: TruncNormalParams) -> np.ndarray:
    """Mode of the truncated law: the mean clamped componentwise to [-1, 1]."""
    mean = np.asarray(p.mean, dtype=np.float64)
    return np.clip(mean, LO, HI)


def truncnorm_moments(p: TruncNormalParams) -> tuple[np.ndarray, np.ndarray]:
    """Analytic per-axis mean and variance of the truncated law on [-1, 1].

    Standard formulas: with a = (lo-m)/s, b = (hi-m)/s, Z = Phi(b) - Phi(a),
      E[x]   = m + s (phi(a) - phi(b)) / Z
      Var[x] = s^2 [1 + (a phi(a) - b phi(b))/Z - ((phi(a) - phi(b))/Z)^2]
    """
    mean, std = _as_params(p)
    a = (LO - mean) / std
    b = (HI - mean) / std
    phi = lambda x: np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    Z = ndtr(b) - ndtr(a)
    Z = np.maximum(Z, 1e-300)
    ratio = (phi(a) - phi(b)) / Z
    m_out = mean + std * ratio
    var_out = std**2 * (1.0 + (a * phi(a) - b * phi(b)) / Z - ratio**2)
    return m_out, np.maximum(var_out, 0.0)


def truncnorm_cdf(x, p_mean: float, p_std: float) -> np.ndarray:
    """CDF of the single-axis truncated law; the KS-test reference."""
    s = max(p_std, STD_FLOOR)
    a = ndtr((LO - p_mean) / s)
    b = ndtr((HI - p_mean) / s)
    x = np.asarray(x, dtype=np.float64)
    c = (ndtr((x - p_mean) / s) - a) / max(b - a, 1e-300)
    return np.clip(c, 0.0, 1.0)
