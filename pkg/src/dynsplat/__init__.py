"""dynsplat: streaming dynamic 3D Gaussian splatting on an orthographic
canonical space.

Scenes are sets of anisotropic 3D Gaussians carrying a linear motion model
and a time-dependent opacity lifecycle. A software rasterizer (tiled, with a
compiled core and a pure NumPy fallback) renders any time instant; analytic
gradients drive a fitting backend that reconstructs scenes from RGB-D frames
one interval at a time.
"""

from .camera import OrthoCamera
from .deform import materialize, materialize_set, opacity_at, position_at
from .errors import (DegenerateDepth, DegenerateRotation, DynsplatError,
                     FitDiverged, InvalidScale, OutOfWindow, ShapeError,
                     SpecError)
from .model import (DeformationParams, DeformSet, DynamicGaussian, DynamicSet,
                    GaussianId, Quaternion, StaticGaussian, StaticSet)
from .render import ImageBuffer, project_gaussian, render, render_at

__version__ = "0.1.0"

__all__ = [
    "OrthoCamera",
    "materialize", "materialize_set", "opacity_at", "position_at",
    "DynsplatError", "InvalidScale", "DegenerateRotation", "OutOfWindow",
    "ShapeError", "DegenerateDepth", "FitDiverged", "SpecError",
    "DeformationParams", "DeformSet", "DynamicGaussian", "DynamicSet",
    "GaussianId", "Quaternion", "StaticGaussian", "StaticSet",
    "ImageBuffer", "project_gaussian", "render", "render_at",
    "__version__",
]
