"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class DivergedError(ArithmeticError):
    """Raised when an iterate, layer output or loss becomes non-finite."""

    def __init__(self, message, iteration=None, layer=None, epoch=None, batch=None):
        super().__init__(message)
        self.iteration = iteration
        self.layer = layer
        self.epoch = epoch
        self.batch = batch


class FormatError(ValueError):
    """Base class for on-disk dataset / checkpoint problems."""


class MissingManifest(FormatError, FileNotFoundError):
    pass


class DimensionMismatch(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass
