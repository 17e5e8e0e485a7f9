"""Exception types shared across the engine."""


class DynsplatError(Exception):
    """Base class for all engine errors."""


class InvalidScale(DynsplatError):
    """A Gaussian scale component is non-positive."""


class DegenerateRotation(DynsplatError):
    """Quaternion norm too close to zero to normalize."""


class OutOfWindow(DynsplatError):
    """Deformation evaluated outside its one-interval validity window."""


class ShapeError(DynsplatError):
    """Image planes with mismatched dimensions."""


class DegenerateDepth(DynsplatError):
    """Depth plane with (near-)zero deviation, not normalizable."""


class FitDiverged(DynsplatError):
    """Optimization produced a non-finite loss."""


class SpecError(DynsplatError):
    """Invalid synthetic scene specification."""
