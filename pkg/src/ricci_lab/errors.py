"""Exception types shared across the package."""


class RicciLabError(Exception):
    """Base class for all package errors."""


class InputError(RicciLabError, ValueError):
    """Invalid arguments or malformed configuration."""


class UnsupportedGeometryError(RicciLabError):
    """The requested construction is not available for this kind of space."""


class ConstructionError(RicciLabError):
    """A deterministic construction could not be completed.

    ``witness`` carries whatever data identifies the failing instance.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class CapacityError(RicciLabError):
    """A dense table would exceed the configured memory cap."""


class NumericError(RicciLabError):
    """An internal numerical routine failed (eigensolver, LP, ...)."""


class EvaluationError(RicciLabError):
    """A quantity could not be evaluated at the requested point."""
