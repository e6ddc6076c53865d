"""Exception hierarchy for specproj.

Every error raised deliberately by the package derives from
:class:`SpecProjError`. Errors caused by bad caller input also derive from
:class:`ValueError` so they behave like the usual numpy/sklearn validation
errors.
"""


class SpecProjError(Exception):
    """Base class for all package errors."""


class ValidationError(SpecProjError, ValueError):
    """Base class for invalid-input errors."""


class NonSquareError(ValidationError):
    pass


class AsymmetricInputError(ValidationError):
    pass


class DimensionMismatchError(ValidationError):
    pass


class ConvergenceFailure(SpecProjError, ArithmeticError):
    """The symmetric eigensolver did not converge."""


class EmptySpectrumError(ValidationError):
    pass


class NegativeEigenvalueError(ValidationError):
    pass


class NotPSDError(ValidationError):
    pass


class ZeroOperatorError(ValidationError):
    pass


class InvalidSpikeError(ValidationError):
    pass


class InvalidClusterError(ValidationError, IndexError):
    pass


class GapUndefinedError(SpecProjError):
    """The guarded spectral gap of a cluster has no finite value."""


class SpikeIndexOutOfRangeError(ValidationError, IndexError):
    pass


class RequiresUnitNoiseError(ValidationError):
    pass


class EmptyBatchError(ValidationError):
    pass


class NegativeInnerError(SpecProjError, ArithmeticError):
    """Projector inner product is negative, so the inputs are not projectors."""


class DegenerateTopEigenvaluesError(SpecProjError, ArithmeticError):
    pass


class NonpositiveBError(ValidationError):
    pass


class ZeroDenominatorError(SpecProjError, ZeroDivisionError):
    pass


class DomainViolationError(ValidationError):
    pass
