"""Exception types shared across the package."""


class DiracGridError(Exception):
    """Base class for all package errors."""


class ArgumentError(DiracGridError, ValueError):
    """A caller-supplied value violates a documented precondition."""


class PreconditionError(ArgumentError):
    """A mathematical hypothesis required by an operation fails.

    Carries enough context to surface the violated hypothesis to the CLI.
    """


class NumericalError(DiracGridError):
    """A numerical computation failed beyond recovery (with diagnostics)."""


class SpectralCollisionError(NumericalError):
    """A shifted solve hit (numerically) singular territory.

    Attributes:
        shift: the offending resolvent parameter.
    """

    def __init__(self, shift, message=None):
        self.shift = shift
        super().__init__(message or f"resolvent parameter {shift} collides with the spectrum")


class SectorViolationError(NumericalError):
    """An eigenvalue was found outside the expected sector."""

    def __init__(self, message, worst=None, measured_angle=None):
        self.worst = worst
        self.measured_angle = measured_angle
        super().__init__(message)


class OracleUnavailableError(NumericalError):
    """The eigendecomposition oracle cannot be trusted on this operator."""


class DecompositionError(NumericalError):
    """A subspace decomposition failed numerically (ill-conditioned basis)."""

    def __init__(self, message, basis_condition=None):
        self.basis_condition = basis_condition
        super().__init__(message)
