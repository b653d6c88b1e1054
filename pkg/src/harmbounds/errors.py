"""Exception taxonomy shared across the package."""


class HarmboundsError(Exception):
    """Base class for all errors raised by harmbounds."""


class SchemaError(HarmboundsError):
    """A required column is missing or the column configuration is invalid."""


class ParseError(HarmboundsError):
    """A CSV cell could not be parsed; carries the offending row index."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class EncodingError(HarmboundsError):
    """The outcome column cannot be mapped onto {-1, +1}."""


class DomainError(HarmboundsError):
    """A value lies outside its admissible domain (e.g. arm not in {0, 1})."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class ParameterError(HarmboundsError, ValueError):
    """An argument violates a precondition (fold count, k, alpha, ...)."""


class ConvergenceError(HarmboundsError):
    """An iterative solver hit its iteration cap; carries the last gradient norm."""

    def __init__(self, message: str, gradient_norm: float | None = None):
        super().__init__(message)
        self.gradient_norm = gradient_norm


class DegeneracyError(HarmboundsError):
    """A fit is impossible on the given data (e.g. a single outcome class)."""


class DegenerateCellError(HarmboundsError):
    """A nonempty partition cell has no observations from one arm."""

    def __init__(self, message: str, cells=()):
        super().__init__(message)
        self.cells = tuple(cells)


class ShapeError(HarmboundsError, ValueError):
    """An array has the wrong dimension for the fitted model."""


class SolverError(HarmboundsError):
    """A root-finding bracket could not be established."""


class InvariantError(HarmboundsError):
    """An internal invariant was violated (indicates a bug or a bad model)."""
