"""Exception hierarchy shared by every module."""


class McError(Exception):
    """Base class for all errors raised by mcfluidics."""


class DomainError(McError, ValueError):
    """An input lies outside the domain of a formula."""


class ConfigError(McError, ValueError):
    """A configuration object (grid, design, scenario) is inconsistent."""


class NumericalError(McError, ArithmeticError):
    """A computation failed numerically.

    ``operation`` names the failing step so the CLI can report it.
    """

    def __init__(self, message: str, operation: str = "unknown"):
        super().__init__(message)
        self.operation = operation


class NoCrossingError(NumericalError):
    """The Gaussian peak does not exceed the threshold concentration."""

    def __init__(self, message: str):
        super().__init__(message, operation="gauss_crossing_times")


class AccuracyError(NumericalError):
    def __init__(self, message: str, bound: float, operation: str = "theorem2_appro2"):
        super().__init__(message, operation=operation)
        self.bound = bound


class SearchError(NumericalError):
    """A threshold or band search found no crossing."""


class StabilityError(NumericalError):
    """The finite-difference march produced a significantly negative field."""
