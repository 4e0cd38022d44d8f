"""Exception types shared across the package."""


class RolforError(Exception):
    """Base class for all library errors."""


class ShapeError(RolforError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class SizeError(RolforError, ValueError):
    """Input collection is too small (or empty) for the operation."""


class DomainError(RolforError, ValueError):
    """A numeric argument lies outside its valid domain."""


class BoundsError(RolforError, IndexError):
    """An index is out of range."""


class EvaluationError(RolforError, ArithmeticError):
    """A forward evaluation produced non-finite values."""


class ParseError(RolforError, ValueError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(RolforError, ValueError):
    """Parsed data violates a documented invariant."""


class DataError(RolforError, ValueError):
    """A dataset is missing data required by the operation."""


class ConfigError(RolforError, ValueError):
    """An experiment or CLI configuration is invalid."""
