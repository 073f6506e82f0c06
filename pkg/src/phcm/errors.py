"""Exception types raised by phcm."""


class PHCMError(Exception):
    """Base class for all library errors."""


class RejectedInput(PHCMError, ValueError):
    """An argument violates a documented precondition."""


class NotSPDError(RejectedInput):
    """A metric or metric ratio is not symmetric positive definite."""


class FoldOverError(PHCMError):
    """A configuration map lost injectivity (det F <= 0)."""

    def __init__(self, message, step=None, node=None):
        super().__init__(message)
        self.step = step
        self.node = node


class ConvergenceError(PHCMError):
    """An iterative solve did not converge; ``trace`` holds the residual history."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class ConfigError(PHCMError, ValueError):
    """A scenario configuration failed validation.

    Attributes
    ----------
    field : str
        Dotted path of the offending field.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
