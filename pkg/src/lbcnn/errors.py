"""Exception types raised across the package."""


class LbcError(Exception):
    """Base class for all package errors."""


class ShapeError(LbcError, ValueError):
    pass


class BoundsError(LbcError, IndexError):
    pass


class ParameterError(LbcError, ValueError):
    pass


class FormatError(LbcError, ValueError):
    """Malformed or truncated file."""


class DataError(LbcError, ValueError):
    """Dataset contents violate a contract (label range, counts)."""


class StateError(LbcError, RuntimeError):
    """Operation called in the wrong order, e.g. backward before forward."""


class TrainingError(LbcError, RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
