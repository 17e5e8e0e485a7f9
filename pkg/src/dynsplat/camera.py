"""Orthographic camera: spatial scaling, principal point, rigid view transform."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class OrthoCamera:
    """Orthographic projection (u, v) = (fx * x_cam + cx, fy * y_cam + cy).

    rotation/translation map canonical coordinates into the camera frame;
    the projection Jacobian [[fx,0,0],[0,fy,0]] has no depth dependence.
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float = 0.0
    cy: float = 0.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("fx and fy must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal within 1e-9")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def canonical(width: int, height: int) -> "OrthoCamera":
        """Axis-aligned identity view with fx = width/2, fy = height/2, so the
        canonical [0,2]x[0,2] square maps onto the full image."""
        return OrthoCamera(width=width, height=height, fx=width / 2.0, fy=height / 2.0)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """Apply the rigid view transform to (..., 3) canonical points."""
        return points @ self.rotation.T + self.translation

    def pixel_anchor_grid(self, nx: int, ny: int) -> np.ndarray:
        """Canonical (u, v) anchors of an nx-by-ny token grid over the image.

        Anchors sit at cell centers, expressed in canonical units, assuming
        the identity view. Returns (ny*nx, 2) row-major (v fast along x).
        """
        px = (np.arange(nx) + 0.5) * (self.width / nx)
        py = (np.arange(ny) + 0.5) * (self.height / ny)
        u = (px - self.cx) / self.fx
        v = (py - self.cy) / self.fy
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu.ravel(), vv.ravel()], axis=1)
