"""Exception types shared across the package."""


class MbgaError(Exception):
    """Base class for all package errors."""


class EmptyInput(MbgaError):
    pass


class DimensionMismatch(MbgaError):
    pass


class CardinalityMismatch(MbgaError):
    pass


class TooFewPoints(MbgaError):
    pass


class IllConditioned(MbgaError):
    pass


class NonFiniteEnergy(MbgaError):
    pass


class MissingIntensities(MbgaError):
    pass


class IndexOutOfRange(MbgaError):
    pass


class NonPositive(MbgaError):
    pass


class BadSpec(MbgaError):
    pass


class ParseError(MbgaError):
    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = path
        self.line = line


class UnsupportedFormat(MbgaError):
    pass
