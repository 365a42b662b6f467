"""Exception types shared across the package."""


class BdsdepError(Exception):
    """Base class for all package errors."""


class InvalidGridError(BdsdepError, ValueError):
    """Raised for degenerate or inconsistent time grids."""


class ConfigError(BdsdepError, ValueError):
    """Raised when a configuration value is unusable (bad key, bad range)."""


class EvaluationError(BdsdepError, ArithmeticError):
    """A coefficient function returned a non-finite value.

    Carries the witness point so the offending input can be reproduced.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class BlowUpError(BdsdepError, ArithmeticError):
    """Forward state became non-finite; ``step`` is the first bad index."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class RegressionError(BdsdepError, ArithmeticError):
    """Least-squares step produced no usable fit; names the grid step."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class PicardDivergenceError(BdsdepError, ArithmeticError):
    """Fixed-point iteration failed to contract within the iteration budget."""

    def __init__(self, message, step, residuals):
        super().__init__(message)
        self.step = step
        self.residuals = list(residuals)
