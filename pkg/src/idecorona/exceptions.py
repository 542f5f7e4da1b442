"""Exception types raised by idecorona."""


class ShapeError(ValueError):
    """Matrix shapes of two operands are incompatible."""


class ConfigurationError(ValueError):
    """A grid, rate or file setting is outside its admissible range."""


class AssumptionError(RuntimeError):
    """A design assumption failed its numerical check."""


class SizingError(MemoryError):
    """The assembled least-squares system would exceed the memory cap."""


class SolverError(RuntimeError):
    """The least-squares solver failed to converge."""
