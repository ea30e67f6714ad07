"""Exception types shared across the solver modules."""


class MsDiffError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(MsDiffError):
    """Array shapes are inconsistent with the mixture or grid."""


class NonPositiveCoefficient(MsDiffError):
    """An off-diagonal friction coefficient is zero or negative."""


class AsymmetricTable(MsDiffError):
    """The friction coefficient table is not symmetric."""


class BadBounds(MsDiffError):
    """Admissibility bounds are non-positive or mis-ordered."""


class ProfileOutOfBounds(MsDiffError):
    """An initial profile violates the configured admissible bounds."""


class NumericallySingular(MsDiffError):
    """A matrix that should be invertible failed to invert cleanly."""


class IncompatibleRHS(MsDiffError):
    """Right-hand side has a component along the kernel of the adjoint."""


class BlockStructureViolation(MsDiffError):
    """The conjugated friction matrix lost its block-triangular form."""


class EigenFailure(MsDiffError):
    """The dense eigensolver did not converge."""


class CFLViolation(MsDiffError):
    """Explicit time step exceeds the stability bound."""


class LinearSolveFailure(MsDiffError):
    """A direct linear solve failed or left an oversized residual."""


class TrajectoryExit(MsDiffError):
    """A characteristic trajectory left the domain beyond ghost width."""


class ParseError(MsDiffError):
    """Configuration document is malformed or carries unknown keys."""


class ValidationError(MsDiffError):
    """Configuration contents violate a model invariant."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message
