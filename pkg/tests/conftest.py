"""Shared fixtures: small cameras, random scenes, synthetic frame pairs."""

import numpy as np
import pytest

from dynsplat.camera import OrthoCamera
from dynsplat.model import GaussianId, StaticGaussian, StaticSet


@pytest.fixture
def cam64():
    return OrthoCamera.canonical(64, 64)


@pytest.fixture
def cam32():
    return OrthoCamera.canonical(32, 32)


def make_random_set(n: int, rng: np.random.Generator, *, frame: int = 0) -> StaticSet:
    """Random well-conditioned static Gaussians covering the visible square."""
    gaussians = []
    ids = []
    for i in range(n):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        gaussians.append(
            StaticGaussian(
                mu=tuple(rng.uniform([0.1, 0.1, 0.8], [1.9, 1.9, 3.0])),
                scale=tuple(rng.uniform(0.03, 0.25, size=3)),
                quat=tuple(q),
                alpha=float(rng.uniform(0.2, 0.95)),
                color=tuple(rng.uniform(0.0, 1.0, size=3)),
            )
        )
        ids.append(GaussianId(frame, i))
    return StaticSet.from_gaussians(gaussians, ids=ids)


@pytest.fixture
def random_set():
    return make_random_set(40, np.random.default_rng(7))


# Canonical u whose 64-wide projection lands exactly on the center of
# pixel column 31: 31.5 / 32.
PIXEL_CENTER_U = 0.984375


@pytest.fixture
def two_blob_set():
    """Two axis-aligned splats stacked in depth, centered on pixel (31, 31)."""
    near = StaticGaussian(
        mu=(PIXEL_CENTER_U, PIXEL_CENTER_U, 1.0),
        scale=(0.3, 0.3, 0.1),
        quat=(1.0, 0.0, 0.0, 0.0),
        alpha=0.5,
        color=(1.0, 0.0, 0.0),
    )
    far = StaticGaussian(
        mu=(PIXEL_CENTER_U, PIXEL_CENTER_U, 2.0),
        scale=(0.3, 0.3, 0.1),
        quat=(1.0, 0.0, 0.0, 0.0),
        alpha=0.99,
        color=(0.0, 0.0, 1.0),
    )
    return StaticSet.from_gaussians([near, far],
                                    ids=[GaussianId(0, 0), GaussianId(0, 1)])
