"""Exception taxonomy shared by every module in the package."""


class LmaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(LmaError):
    """Shape disagreement: rank, extent, or divisibility violation."""


class ParameterError(LmaError):
    """A numeric argument is out of its documented range."""


class ConfigurationError(LmaError):
    """A configuration object is internally inconsistent or names an unknown option."""


class InputError(LmaError):
    """Runtime input (image, resolution, class map) violates a precondition."""


class FormatError(LmaError):
    """Malformed serialized data. Carries the byte offset of the first violation."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset
