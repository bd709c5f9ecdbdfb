"""Exception types shared across the package."""


class CerteigError(Exception):
    """Base class for all library errors."""


class ThetaSyntaxError(CerteigError):
    """Coefficient expression could not be parsed.

    Carries the byte offset of the offending character.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownVariableError(ThetaSyntaxError):
    """Parameter index outside 1..p."""


class DegenerateThetaError(CerteigError):
    """Coefficient evaluates to a non-finite value inside the box."""


class DimensionMismatchError(CerteigError):
    """Operand dimensions are inconsistent."""


class NonOrthonormalBasisError(CerteigError):
    """A basis matrix fails the orthonormality tolerance."""


class SolverFailureError(CerteigError):
    """An iterative solver did not converge within its iteration cap."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class NumericalConsistencyError(CerteigError):
    """A computed quantity violates a structural bound by more than noise."""


class NonFiniteObjectiveError(CerteigError):
    """The optimization objective returned a non-finite value."""

    def __init__(self, message, mu=None):
        super().__init__(message)
        self.mu = mu


class StagnationError(CerteigError):
    """The greedy loop re-selected a stored point above tolerance."""


class ConfigError(CerteigError):
    """Run configuration is invalid."""


class BudgetExceededError(CerteigError):
    """A verification request exceeds the dense-oracle budget."""
