"""Exception types shared across the package."""


class LdpGraphError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(LdpGraphError, ValueError):
    """An argument violates a documented precondition."""


class ParseError(LdpGraphError, ValueError):
    """A data file is malformed; message carries file path and line number."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class DimensionMismatchError(LdpGraphError, ValueError):
    """Row/column counts of related inputs disagree."""


class DomainError(LdpGraphError, ValueError):
    """A value lies outside the mechanism's input domain."""


class ConstraintError(LdpGraphError, ValueError):
    """A feasibility inequality is violated; message names the inequality."""

    def __init__(self, inequality, message=""):
        self.inequality = inequality
        text = f"constraint violated: {inequality}"
        if message:
            text += f" ({message})"
        super().__init__(text)


class NumericError(LdpGraphError, ArithmeticError):
    """A computation left the representable/finite range."""


class ShapeError(LdpGraphError, ValueError):
    """Matrix dimensions do not line up."""


class ConfigError(LdpGraphError, ValueError):
    """An experiment configuration fails validation."""
