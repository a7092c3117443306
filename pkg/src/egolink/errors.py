"""Exception hierarchy.

Everything raised on purpose by the package derives from ``EgolinkError``.
Data problems subclass ``ValidationError`` (the CLI maps them to exit code 1);
plain ``OSError`` is left for I/O failures (exit code 2).
"""


class EgolinkError(Exception):
    """Base class for all package errors."""


class ValidationError(EgolinkError, ValueError):
    """Input data or configuration violates a documented constraint."""


class ParseError(ValidationError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)


class InvalidConfig(ValidationError):
    pass


class DegenerateGeometry(ValidationError):
    """Bearing requested between two coincident points."""


class OutOfRange(ValidationError):
    """Timestamp outside a trajectory's time span."""


class InsufficientData(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NoCommonRegions(ValidationError):
    pass


class MissingAnnotation(ValidationError):
    pass


class UnknownQuery(EgolinkError, KeyError):
    pass


class NoRelevant(ValidationError):
    """A query has no relevant gallery item, so AP is undefined."""
