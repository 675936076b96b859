"""Exception hierarchy shared by every volqml module."""


class VolqmlError(Exception):
    """Base class for all library errors."""


class ConstraintError(VolqmlError, ValueError):
    """A parameter or specification violates its admissible region."""


class UnsupportedError(VolqmlError):
    """The requested quantity does not exist for this input (e.g. infinite moment)."""


class NumericError(VolqmlError, ArithmeticError):
    """A recursion produced a non-finite value.

    ``index`` records the step at which the first non-finite value appeared.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class DivergenceError(NumericError):
    """A simulated state exceeded the divergence threshold (non-stationary parameters)."""


class FitError(VolqmlError):
    """Every optimizer start failed. ``log`` holds one entry per start."""

    def __init__(self, message: str, log: list | None = None):
        super().__init__(message)
        self.log = log or []


class CovarianceError(VolqmlError):
    """The information matrix is singular, so no covariance can be formed."""

    def __init__(self, message: str, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class InputError(VolqmlError, ValueError):
    """Malformed input file or configuration. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
