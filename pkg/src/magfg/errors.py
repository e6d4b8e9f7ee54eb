"""Exception hierarchy.

Numerical failures and input/validation failures are kept apart so the
command line can map them onto distinct exit codes.
"""


class MagfgError(Exception):
    """Base class for all errors raised by this package."""


class NumericalError(MagfgError):
    """A computation could not be carried out reliably."""


class InputError(MagfgError, ValueError):
    """Invalid, missing or malformed input."""


class GimbalLockError(NumericalError):
    pass


class SingularCovarianceError(NumericalError):
    pass


class DegenerateFieldError(NumericalError):
    """Field norm too small for the scalar measurement derivative."""


class NormalEquationsSingular(NumericalError):
    def __init__(self, message, sigma_min=None, sigma_max=None):
        super().__init__(message)
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max


class IllConditionedError(NumericalError):
    pass


class RankDeficientError(NumericalError):
    pass


class DimensionMismatchError(InputError):
    pass


class ConfigError(InputError):
    pass


class SchemaError(InputError):
    pass


class ParseError(InputError):
    def __init__(self, line, column, reason):
        super().__init__(f"line {line}, column {column!r}: {reason}")
        self.line = line
        self.column = column
        self.reason = reason


class MonotonicityError(InputError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line
