"""Exception taxonomy shared across the package.

The CLI maps these onto its exit-code contract, so new error types should
subclass one of the four roots below rather than raising bare ValueError.
"""


class RenewalPopError(Exception):
    """Base class for all package errors."""


class ValidationFailure(RenewalPopError):
    """A model or run configuration violates a structural precondition."""


class OutOfDomainError(ValidationFailure):
    """A state location lies outside the grid or state domain."""

    def __init__(self, location, lo, hi, what="location"):
        self.location = location
        super().__init__(f"{what} {location!r} outside [{lo!r}, {hi!r}]")


class GridMismatchError(ValidationFailure):
    """Two measures that must share a grid do not."""


class OrientationError(ValidationFailure):
    """Travel-time endpoints are not ordered along the flow direction."""


class DomainExitError(RenewalPopError):
    """A trajectory left the state domain before the requested duration."""

    def __init__(self, exit_time, message=None):
        self.exit_time = exit_time
        super().__init__(message or f"trajectory exits domain at t={exit_time:.6g}")


class DivergentDiscountError(ValidationFailure):
    """Discount rate at or below the kernel decay abscissa."""


class InstabilityError(RenewalPopError):
    """Mass blow-up between solver steps; advise a smaller dt."""


class NonConvergenceError(RenewalPopError):
    """An iteration failed to converge (degenerate peripheral spectrum, etc.)."""


class SubcriticalBeyondAbscissaError(NonConvergenceError):
    """No root of rho(K_lambda)=1 above the decay abscissa."""


class InsufficientHorizonError(ValidationFailure):
    """The fit window holds too few samples for a rate estimate."""


class AssemblyInconsistencyError(RenewalPopError):
    """An assembled operator violates a sign or positivity requirement."""
