"""Core Gaussian value types, covariance construction and batched containers.

Two representations coexist: frozen dataclasses for single Gaussians
(validated, hashable, safe to share) and *Set containers holding the same
data as flat float64 arrays, which is what the rasterizer and fitter
operate on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRotation, InvalidScale

# Covariance stays invertible in the rasterizer down to this scale.
MIN_SCALE = 1e-4

_QUAT_NORM_EPS = 1e-12


def normalize_quaternion(q) -> np.ndarray:
    """Rescale a raw (w, x, y, z) 4-vector to unit norm.

    Raises DegenerateRotation if the norm is below 1e-12.
    """
    q = np.asarray(q, dtype=np.float64)
    n = float(np.linalg.norm(q))
    if n <= _QUAT_NORM_EPS:
        raise DegenerateRotation(f"quaternion norm {n:g} too small")
    return q / n


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quats_to_rotmats(quats: np.ndarray) -> np.ndarray:
    """Batched quat_to_rotmat: (N, 4) unit quaternions -> (N, 3, 3)."""
    w, x, y, z = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    R = np.empty((quats.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance_from_rs(q, s) -> np.ndarray:
    """3x3 SPD covariance from rotation quaternion and positive scales.

    Computes R diag(s) diag(s)^T R^T for the unit quaternion q.
    """
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0):
        raise InvalidScale(f"scale must be strictly positive, got {s}")
    if isinstance(q, Quaternion):
        q = q.as_array()
    else:
        q = normalize_quaternion(q)
    R = quat_to_rotmat(q)
    M = R * s[np.newaxis, :]
    return M @ M.T


@dataclass(frozen=True)
class Quaternion:
    """Unit-norm rotation quaternion, normalized at construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = normalize_quaternion([self.w, self.x, self.y, self.z])
        object.__setattr__(self, "w", float(n[0]))
        object.__setattr__(self, "x", float(n[1]))
        object.__setattr__(self, "y", float(n[2]))
        object.__setattr__(self, "z", float(n[3]))

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_rotmat(self.as_array())


@dataclass(frozen=True, order=True)
class GaussianId:
    """Stable per-stream identity: (frame that created it, token index)."""

    frame_index: int
    token_index: int

    def __post_init__(self):
        if self.frame_index < 0 or self.token_index < 0:
            raise ValueError("GaussianId components must be non-negative")


@dataclass(frozen=True)
class StaticGaussian:
    """One 3D Gaussian in canonical space: position, scale, rotation, opacity, color."""

    mu: tuple[float, float, float]
    scale: tuple[float, float, float]
    quat: Quaternion
    alpha: float
    color: tuple[float, float, float]

    def __post_init__(self):
        if not isinstance(self.quat, Quaternion):
            object.__setattr__(self, "quat", Quaternion(*self.quat))
        if any(s <= 0 for s in self.scale):
            raise InvalidScale(f"scale must be strictly positive, got {self.scale}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"opacity must be in [0,1], got {self.alpha}")
        if any(not 0.0 <= c <= 1.0 for c in self.color):
            raise ValueError(f"color components must be in [0,1], got {self.color}")

    def covariance(self) -> np.ndarray:
        return covariance_from_rs(self.quat, np.array(self.scale))


@dataclass(frozen=True)
class DeformationParams:
    """Per-Gaussian motion and opacity lifecycle over one frame interval.

    velocity is bounded to [-1,1]^3 per unit normalized time; gamma0 > 0 is
    the lifecycle transition rate, gamma1 in [0,1] the fade-out window, t0
    the creation time (an endpoint of the active interval).
    """

    velocity: tuple[float, float, float]
    gamma0: float
    gamma1: float
    t0: float

    def __post_init__(self):
        if any(abs(v) > 1.0 for v in self.velocity):
            raise ValueError(f"velocity components must lie in [-1,1], got {self.velocity}")
        if self.gamma0 <= 0:
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")
        if not 0.0 <= self.gamma1 <= 1.0:
            raise ValueError(f"gamma1 must be in [0,1], got {self.gamma1}")

    @staticmethod
    def identity(t0: float = 0.0, gamma0: float = 4.0) -> "DeformationParams":
        """No motion, no fade inside the window (gamma1 = 1)."""
        return DeformationParams((0.0, 0.0, 0.0), gamma0, 1.0, t0)


@dataclass(frozen=True)
class DynamicGaussian:
    """A static Gaussian plus its active deformation and stream identity."""

    base: StaticGaussian
    deform: DeformationParams
    id: GaussianId


class StaticSet:
    """Batched static Gaussians as flat float64 arrays.

    Fields: mu (N,3), scale (N,3), quat (N,4) unit, alpha (N,), color (N,3),
    ids (N,2) int64. The rasterizer consumes this directly.
    """

    __slots__ = ("mu", "scale", "quat", "alpha", "color", "ids")

    def __init__(self, mu, scale, quat, alpha, color, ids=None):
        self.mu = np.ascontiguousarray(mu, dtype=np.float64).reshape(-1, 3)
        n = self.mu.shape[0]
        self.scale = np.ascontiguousarray(scale, dtype=np.float64).reshape(n, 3)
        self.quat = np.ascontiguousarray(quat, dtype=np.float64).reshape(n, 4)
        self.alpha = np.ascontiguousarray(alpha, dtype=np.float64).reshape(n)
        self.color = np.ascontiguousarray(color, dtype=np.float64).reshape(n, 3)
        if ids is None:
            ids = np.stack([np.zeros(n, dtype=np.int64), np.arange(n, dtype=np.int64)], axis=1)
        self.ids = np.ascontiguousarray(ids, dtype=np.int64).reshape(n, 2)

    def __len__(self) -> int:
        return self.mu.shape[0]

    @staticmethod
    def empty() -> "StaticSet":
        return StaticSet(
            np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3))
        )

    @staticmethod
    def from_gaussians(gaussians, ids=None) -> "StaticSet":
        if not gaussians:
            return StaticSet.empty()
        mu = np.array([g.mu for g in gaussians])
        scale = np.array([g.scale for g in gaussians])
        quat = np.array([g.quat.as_array() for g in gaussians])
        alpha = np.array([g.alpha for g in gaussians])
        color = np.array([g.color for g in gaussians])
        id_arr = None
        if ids is not None:
            id_arr = np.array([[i.frame_index, i.token_index] for i in ids], dtype=np.int64)
        return StaticSet(mu, scale, quat, alpha, color, id_arr)

    def to_gaussians(self) -> list[StaticGaussian]:
        return [
            StaticGaussian(
                tuple(self.mu[i]),
                tuple(self.scale[i]),
                Quaternion(*self.quat[i]),
                float(self.alpha[i]),
                tuple(self.color[i]),
            )
            for i in range(len(self))
        ]

    def validate(self) -> None:
        if np.any(self.scale <= 0):
            raise InvalidScale("all scale components must be > 0")
        if np.any(self.alpha < 0) or np.any(self.alpha > 1):
            raise ValueError("opacity out of [0,1]")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise ValueError("color out of [0,1]")
        norms = np.linalg.norm(self.quat, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise DegenerateRotation("quaternions must be unit norm")

    def copy(self) -> "StaticSet":
        return StaticSet(
            self.mu.copy(), self.scale.copy(), self.quat.copy(),
            self.alpha.copy(), self.color.copy(), self.ids.copy(),
        )

    def covariances(self) -> np.ndarray:
        """(N, 3, 3) covariances R S S^T R^T per Gaussian."""
        if np.any(self.scale <= 0):
            raise InvalidScale("all scale components must be > 0")
        R = quats_to_rotmats(self.quat)
        M = R * self.scale[:, np.newaxis, :]
        return M @ np.swapaxes(M, 1, 2)


class DeformSet:
    """Batched deformation fields aligned with a StaticSet of the same length."""

    __slots__ = ("velocity", "gamma0", "gamma1", "t0")

    def __init__(self, velocity, gamma0, gamma1, t0):
        self.velocity = np.ascontiguousarray(velocity, dtype=np.float64).reshape(-1, 3)
        n = self.velocity.shape[0]
        self.gamma0 = np.ascontiguousarray(gamma0, dtype=np.float64).reshape(n)
        self.gamma1 = np.ascontiguousarray(gamma1, dtype=np.float64).reshape(n)
        t0 = np.asarray(t0, dtype=np.float64)
        if t0.ndim == 0:
            t0 = np.full(n, float(t0))
        self.t0 = np.ascontiguousarray(t0, dtype=np.float64).reshape(n)

    def __len__(self) -> int:
        return self.velocity.shape[0]

    @staticmethod
    def identity(n: int, t0: float = 0.0, gamma0: float = 4.0) -> "DeformSet":
        return DeformSet(np.zeros((n, 3)), np.full(n, gamma0), np.ones(n), np.full(n, t0))

    @staticmethod
    def from_params(params) -> "DeformSet":
        return DeformSet(
            np.array([p.velocity for p in params]).reshape(-1, 3),
            np.array([p.gamma0 for p in params]),
            np.array([p.gamma1 for p in params]),
            np.array([p.t0 for p in params]),
        )

    def params(self) -> list:
        """Inverse of from_params."""
        return [
            DeformationParams(tuple(self.velocity[i]), float(self.gamma0[i]),
                              float(self.gamma1[i]), float(self.t0[i]))
            for i in range(len(self))
        ]

    def validate(self) -> None:
        if np.any(np.abs(self.velocity) > 1.0):
            raise ValueError("velocity components must lie in [-1,1]")
        if np.any(self.gamma0 <= 0):
            raise ValueError("gamma0 must be positive")
        if np.any(self.gamma1 < 0) or np.any(self.gamma1 > 1):
            raise ValueError("gamma1 must be in [0,1]")

    def copy(self) -> "DeformSet":
        return DeformSet(self.velocity.copy(), self.gamma0.copy(), self.gamma1.copy(), self.t0.copy())


@dataclass
class DynamicSet:
    """A StaticSet plus aligned deformations: the unit of scene state."""

    base: StaticSet
    deform: DeformSet = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.deform is None:
            self.deform = DeformSet.identity(len(self.base))
        if len(self.base) != len(self.deform):
            raise ValueError("base and deform lengths differ")

    def __len__(self) -> int:
        return len(self.base)

    @staticmethod
    def empty() -> "DynamicSet":
        return DynamicSet(StaticSet.empty(), DeformSet.identity(0))

    def copy(self) -> "DynamicSet":
        return DynamicSet(self.base.copy(), self.deform.copy())

    def select(self, mask_or_index) -> "DynamicSet":
        b, d = self.base, self.deform
        return DynamicSet(
            StaticSet(b.mu[mask_or_index], b.scale[mask_or_index], b.quat[mask_or_index],
                      b.alpha[mask_or_index], b.color[mask_or_index], b.ids[mask_or_index]),
            DeformSet(d.velocity[mask_or_index], d.gamma0[mask_or_index],
                      d.gamma1[mask_or_index], d.t0[mask_or_index]),
        )

    @staticmethod
    def concatenate(a: "DynamicSet", b: "DynamicSet") -> "DynamicSet":
        return DynamicSet(
            StaticSet(
                np.concatenate([a.base.mu, b.base.mu]),
                np.concatenate([a.base.scale, b.base.scale]),
                np.concatenate([a.base.quat, b.base.quat]),
                np.concatenate([a.base.alpha, b.base.alpha]),
                np.concatenate([a.base.color, b.base.color]),
                np.concatenate([a.base.ids, b.base.ids]),
            ),
            DeformSet(
                np.concatenate([a.deform.velocity, b.deform.velocity]),
                np.concatenate([a.deform.gamma0, b.deform.gamma0]),
                np.concatenate([a.deform.gamma1, b.deform.gamma1]),
                np.concatenate([a.deform.t0, b.deform.t0]),
            ),
        )

    def to_gaussians(self) -> list[DynamicGaussian]:
        statics = self.base.to_gaussians()
        out = []
        for i, g in enumerate(statics):
            out.append(
                DynamicGaussian(
                    g,
                    DeformationParams(
                        tuple(self.deform.velocity[i]),
                        float(self.deform.gamma0[i]),
                        float(self.deform.gamma1[i]),
                        float(self.deform.t0[i]),
                    ),
                    GaussianId(int(self.base.ids[i, 0]), int(self.base.ids[i, 1])),
                )
            )
        return out

    @staticmethod
    def from_gaussians(gaussians) -> "DynamicSet":
        if not gaussians:
            return DynamicSet.empty()
        base = StaticSet.from_gaussians([g.base for g in gaussians], ids=[g.id for g in gaussians])
        deform = DeformSet.from_params([g.deform for g in gaussians])
        return DynamicSet(base, deform)
