"""Rasterization kernel backends.

The compiled extension is preferred when importable; the numpy implementation
is the always-available fallback. Set GSPLAT_KERNEL=numpy or =cython to force
one (forcing an unavailable backend raises ImportError).
"""

from __future__ import annotations

import os

from . import _numpy

_backends = {"numpy": _numpy}
try:
    from . import _rasterize
    _backends["cython"] = _rasterize
except ImportError:
    _rasterize = None

AVAILABLE_BACKENDS = tuple(sorted(_backends))


def get_backend(name: str):
    try:
        return _backends[name]
    except KeyError:
        raise ImportError(
            f"kernel backend {name!r} is not available (have: {', '.join(AVAILABLE_BACKENDS)})"
        ) from None


_forced = os.environ.get("GSPLAT_KERNEL", "").strip().lower()
if _forced:
    _active = get_backend(_forced)
else:
    _active = _backends.get("cython", _numpy)

BACKEND = _active.BACKEND
render_forward = _active.render_forward
render_backward = _active.render_backward

ALPHA_CLAMP = _numpy.ALPHA_CLAMP
T_EPS = _numpy.T_EPS
Q_MAX = _numpy.Q_MAX
