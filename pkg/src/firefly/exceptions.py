"""Exception types shared across the package."""


class FireflyError(Exception):
    """Base class for all errors raised by this package."""


class StructuralError(FireflyError, ValueError):
    """Shapes, indices or parameter groups do not line up."""


class NumericError(FireflyError, ArithmeticError):
    """A non-finite value appeared during evaluation or optimization."""


class ContractError(FireflyError, ValueError):
    """A precondition on budgets or gate values was violated."""


class ConfigError(FireflyError, ValueError):
    """A run configuration failed validation."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
