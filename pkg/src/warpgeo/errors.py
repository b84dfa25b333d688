"""Exception types raised by warpgeo."""


class WarpGeoError(ValueError):
    """Base class for all library errors."""


class DimensionError(WarpGeoError):
    """A grid is too small for the requested operation."""


class DimensionMismatchError(WarpGeoError):
    """Two grids that must share a shape do not."""


class NonPositiveDepthError(WarpGeoError):
    """A depth value is zero, negative or non-finite."""


class DegenerateMaskError(WarpGeoError):
    """A masked mean has zero total weight."""


class EmptyRegionError(WarpGeoError):
    """A metric was asked to average over no pixels."""


class InvalidSpecError(WarpGeoError):
    """A scene or run configuration is invalid.

    ``field`` names the offending configuration key when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class FormatError(WarpGeoError):
    """A file could not be parsed."""


class NonFiniteGradientError(WarpGeoError, ArithmeticError):
    """An optimizer received NaN or inf gradients."""


class DivergenceError(WarpGeoError, ArithmeticError):
    """The optimized loss grew far beyond the best value seen."""
