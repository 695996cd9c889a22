"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: validation problems -> 1,
numeric failures -> 2, invariant violations -> 3.
"""


class DhwError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(DhwError, ValueError):
    """Bad input: malformed config, inconsistent data, violated precondition."""


class DomainError(ValidationError):
    """A numeric argument is outside the domain where the quantity is defined."""


class AdmissibilityError(ValidationError):
    """A beam set contains a wave vector with rho_g <= 0 (or below the margin)."""


class NumericError(DhwError, ArithmeticError):
    """A numerical routine failed (non-finite data, step-size underflow, ...)."""


class InvariantViolation(DhwError):
    """A conserved quantity or certified bound was violated beyond tolerance."""
