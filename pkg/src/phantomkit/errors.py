"""Exception hierarchy shared across the package."""


class PhantomkitError(Exception):
    """Base class for all errors raised by this package."""


class EmptyMask(PhantomkitError):
    """Operation requires at least one occupied voxel."""


class GeometryMismatch(PhantomkitError):
    """Two volumes/masks do not share dims, spacing and origin."""


class InvalidTolerance(PhantomkitError):
    """Surface-distance tolerance must be positive."""


class InvalidScale(PhantomkitError):
    """Volume scale factor outside the allowed range."""


class TransplantClipped(PhantomkitError):
    """No donor voxel lands inside the receiver grid."""


class ConstantFeature(PhantomkitError):
    """A feature column has zero variance and cannot be z-scored."""


class ConstantTarget(PhantomkitError):
    """All training targets equal; only the mean can be predicted."""


class ShapeError(PhantomkitError):
    """Vector/matrix dimensions do not agree."""


class InvalidConfig(PhantomkitError):
    """Configuration value violates its documented constraints."""


class EmptyDatabase(PhantomkitError):
    """A retrieval step was given no candidate patients."""


class GenerationFailure(PhantomkitError):
    """Synthetic cohort generation produced infeasible geometry."""


class NoFeasibleSolution(PhantomkitError):
    """Constraint search exhausted its budget without a feasible point."""

    def __init__(self, message, best_violation=None):
        super().__init__(message)
        self.best_violation = best_violation


class EmptyBin(PhantomkitError):
    """A baseline's peer group for the test patient is empty."""


class EmptyInput(PhantomkitError):
    """An aggregate was requested over zero values."""


class SchemaError(PhantomkitError):
    """A file does not conform to its declared on-disk schema."""


class IoError(PhantomkitError):
    """Filesystem read/write failed."""
