"""Exception types raised across the package."""


class SepControlError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SepControlError, ValueError):
    pass


class NumericalBlowup(SepControlError, ArithmeticError):
    """A non-finite or out-of-tolerance value appeared during integration.

    ``node`` is the grid index where the problem was first detected, when known.
    """

    def __init__(self, message, node=None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node


class SynthesisFailure(SepControlError):
    def __init__(self, message, node=None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node


class CausalityViolation(SepControlError):
    """A control law tried to read a signal value it is not entitled to yet."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ValidationError(SepControlError, ValueError):
    """Scenario validation failed; ``errors`` holds ``(key_path, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{key}: {msg}" for key, msg in self.errors]
        super().__init__("invalid scenario:\n  " + "\n  ".join(lines))
