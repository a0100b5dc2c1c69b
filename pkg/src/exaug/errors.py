"""Exception types raised across the toolkit."""


class ExaugError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(ExaugError, ValueError):
    """Non-finite or otherwise malformed numeric input."""


class InvalidDepthError(InvalidInputError):
    pass


class ShapeError(ExaugError, ValueError):
    """Raster or vector sizes that do not agree."""


class InvalidBandError(InvalidInputError):
    pass


class EmptySynthesisError(ExaugError):
    """No pixel of the synthesized view received a color."""


class OptimizationFailure(ExaugError):
    pass


class GenerationError(ExaugError):
    pass


class InvalidPathError(InvalidInputError):
    pass


class FormatError(ExaugError, ValueError):
    """A file on disk does not follow the expected binary layout."""
