"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class PreconditionError(ValueError):
    """An operation was called on a model in the wrong regime or state."""


class NumericalFailure(RuntimeError):
    """A quadrature, root-finding or ODE step did not converge.

    ``partial`` carries whatever was computed before the failure (for
    example a half-filled :class:`~virgin_island.coeffs.AssumptionReport`).
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ResourceLimitError(RuntimeError):
    """A simulation exceeded its node cap; ``partial`` holds what was built."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
