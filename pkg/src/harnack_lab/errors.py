"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class RangeError(ValueError):
    """A requested value is not attained by a monotone function."""


class PreconditionError(ValueError):
    """Input violates a documented precondition (e.g. a flat clock)."""


class NumericalError(ArithmeticError):
    """A simulation produced a non-finite or runaway state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ConfigError(ValueError):
    """Invalid experiment configuration; ``location`` names the offending key."""

    def __init__(self, location, message):
        super().__init__(f"{location}: {message}")
        self.location = location
