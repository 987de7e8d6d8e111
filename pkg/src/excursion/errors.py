"""Exception types shared across the package."""


class ExcursionError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(ExcursionError, ValueError):
    """Invalid scalar parameter or configuration value."""


class ShapeError(ExcursionError, ValueError):
    """Array or tile dimensions do not conform."""


class DomainError(ExcursionError, ValueError):
    """Input outside the mathematical domain of a function (e.g. NaN)."""


class FactorizationError(ExcursionError, ArithmeticError):
    """Cholesky factorization met a non-positive pivot.

    ``index`` is the global (0-based) row of the failing pivot.
    """

    def __init__(self, index, message=None):
        self.index = int(index)
        super().__init__(message or f"matrix is not positive definite (pivot at row {self.index})")


class FactorizationIntegrityError(FactorizationError):
    """A supplied Cholesky factor has a non-positive diagonal entry."""

    def __init__(self, index):
        super().__init__(index, f"Cholesky factor has non-positive diagonal at row {int(index)}")


class GraphError(ExcursionError):
    """Task graph is malformed (e.g. contains a cycle)."""


class MatrixFormatError(ExcursionError, OSError):
    """A matrix file is truncated or carries the wrong magic bytes."""


class DuplicateLocationWarning(UserWarning):
    """Two or more spatial locations coincide; the covariance is singular."""


class RankCapWarning(UserWarning):
    """A tile hit the rank cap before reaching the compression tolerance."""
