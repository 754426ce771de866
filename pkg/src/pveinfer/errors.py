class PveInferError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PveInferError, ValueError):
    """Input shape is incompatible with the requested operation."""


class NumericalFailureError(PveInferError, ArithmeticError):
    """A decomposition, series, or root search failed to converge."""


class DegenerateDensityError(PveInferError, ArithmeticError):
    """The truncated conditional density has no usable mass."""


class StructureViolationError(PveInferError):
    """A truncation set has more than two disjoint components."""


class UndefinedPveError(PveInferError, ValueError):
    """Sample PVE requested for an all-zero spectrum."""
