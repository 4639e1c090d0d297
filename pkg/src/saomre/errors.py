"""Exception types shared across the package.

Each maps to a CLI exit code: ValidationError -> 2, DivergenceError and
CollinearityError -> 3, DegeneracyError -> 4.
"""

from __future__ import annotations


class SaomreError(Exception):
    """Base class for package errors."""


class ValidationError(SaomreError):
    """Malformed input data or configuration."""


class DivergenceError(SaomreError):
    """Estimation left the admissible region.

    Carries the partial parameter chain so callers can dump it.
    """

    def __init__(self, message: str, chain=None):
        super().__init__(message)
        self.chain = chain


class CollinearityError(SaomreError):
    """A required matrix is numerically singular.

    Raised when the derivative or preconditioning matrix cannot be
    inverted even after ridging, typically because two effects carry
    the same information.
    """

    def __init__(self, message: str, chain=None):
        super().__init__(message)
        self.chain = chain


class DegeneracyError(SaomreError):
    """Simulation hit the ministep budget too often.

    The parameter values push the process into a region where periods
    do not terminate in a plausible number of changes.
    """
