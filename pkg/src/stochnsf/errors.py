"""Exception hierarchy shared by all stochnsf modules.

Every error carries a short machine-readable ``code`` so that reports and
the command line can classify failures without string matching.
"""

from __future__ import annotations


class StochNSFError(Exception):
    """Base class for all library errors."""

    code = "error"


class InvalidCutoffError(StochNSFError, ValueError):
    code = "invalid-cutoff"


class InvalidOperandError(StochNSFError, ValueError):
    code = "invalid-operand"


class GridMismatchError(StochNSFError, ValueError):
    code = "grid-mismatch"


class InvalidModeError(StochNSFError, ValueError):
    code = "invalid-mode"


class InsufficientHeadroomError(StochNSFError, ValueError):
    code = "insufficient-headroom"


class NonfiniteEvaluationError(StochNSFError, ArithmeticError):
    """A pointwise evaluation produced inf or nan.

    Attributes:
        location: collocation coordinates (x1, x2, x3) of the first offending point.
        value: the offending value.
    """

    code = "nonfinite-evaluation"

    def __init__(self, message: str, location=None, value=None):
        super().__init__(message)
        self.location = location
        self.value = value


class PositivityViolationError(StochNSFError, ArithmeticError):
    """A field that must be strictly positive is not.

    Attributes:
        min_value: the smallest collocation value found.
        location: coordinates (x1, x2, x3) where it occurs.
    """

    code = "positivity-violation"

    def __init__(self, message: str, min_value=None, location=None):
        super().__init__(message)
        self.min_value = min_value
        self.location = location


class BlowUpError(StochNSFError, ArithmeticError):
    """A time step produced non-finite coefficients."""

    code = "blow-up"

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ConfigError(StochNSFError, ValueError):
    """Configuration could not be parsed or validated.

    ``problems`` lists every issue found, each as a human-readable string
    that names the offending key and, when known, the line number.
    """

    code = "config-error"

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems) if self.problems else "invalid configuration")
