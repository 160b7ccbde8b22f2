"""Exception hierarchy shared across the package."""


class FluxMCError(Exception):
    """Base class for all package errors."""


class DimensionError(FluxMCError, ValueError):
    """Array shapes do not agree."""


class DefinitenessError(FluxMCError, ValueError):
    """A matrix or diagonal that must be positive definite is not."""


class UnsupportedPathError(FluxMCError):
    """The requested computation needs an explicit matrix or a dense object
    that is not available (matrix-free operator, dimension above the cap)."""


class AdjointMismatchError(FluxMCError, ValueError):
    """A matrix-free operator failed the randomized adjoint probe."""


class InsufficientSampleError(FluxMCError, ValueError):
    pass


class ConfigError(FluxMCError, ValueError):
    pass


class EnsembleFailureError(FluxMCError):
    """Too many ensemble members failed to produce a converged MAP estimate."""

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)


class StoreError(FluxMCError):
    """Base class for ensemble/matrix file load errors."""


class ChecksumError(StoreError):
    pass


class TruncatedStoreError(StoreError):
    """Payload size disagrees with the shape recorded in the header."""


class MetadataError(StoreError):
    pass
