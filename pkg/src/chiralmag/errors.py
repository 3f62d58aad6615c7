"""Exception types raised across the package."""


class ChiralmagError(Exception):
    """Base class for all package errors."""


class NonPositiveDeterminant(ChiralmagError):
    """A deformation gradient with det <= 0 (or below the admissibility gate)."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class ZeroVectorNode(ChiralmagError):
    pass


class InvalidGrid(ChiralmagError, ValueError):
    pass


class GridMismatch(ChiralmagError, ValueError):
    pass


class DegenerateGrid(ChiralmagError, ValueError):
    pass


class OnBoundaryImage(ChiralmagError):
    """Degree queried too close to the image of the boundary."""


class NonIntegerWinding(ChiralmagError):
    """Summed solid angle is too far from an integer multiple of 4*pi."""


class MissingPreimage(ChiralmagError):
    pass


class LineSearchStalled(ChiralmagError):
    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class StepFailed(ChiralmagError):
    def __init__(self, step, cause):
        super().__init__(f"incremental step {step} failed: {cause}")
        self.step = step
        self.cause = cause


class CertificationFailed(ChiralmagError):
    pass


class UnknownFixture(ChiralmagError, KeyError):
    pass


class ConfigError(ChiralmagError, ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field
