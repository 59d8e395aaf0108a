"""Exception hierarchy shared by all modules."""


class OrbitLabError(Exception):
    """Base class for every error raised by orbitlab."""


class DomainError(OrbitLabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ChartError(DomainError):
    """A group element (or test-function support) lies outside the coordinate chart."""


class ChartSingularityError(ChartError):
    """Euler-angle degeneracy: an intermediate cosine is too close to zero."""


class CountOverflowError(OrbitLabError, OverflowError):
    """An exact count does not fit the declared integer width."""


class StructuralFailure(OrbitLabError):
    """A structural identity failed its numerical tolerance.

    Carries the offending measurement in ``details`` so callers (the CLI in
    particular) can report it as a finding rather than a crash.
    """

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}
