"""Exception hierarchy. Every error carries the CLI exit code it maps to."""

from __future__ import annotations


class RwreError(Exception):
    exit_code = 2


class UsageError(RwreError, ValueError):
    """Bad arguments or violated preconditions."""


class ConfigError(UsageError):
    def __init__(self, message: str, field: str = "", line: int | None = None):
        self.field = field
        self.line = line
        where = ""
        if field:
            where += f" [field: {field}]"
        if line is not None:
            where += f" [line {line}]"
        super().__init__(f"{message}{where}")


class ResourceError(RwreError):
    exit_code = 3


class UnsupportedModelError(UsageError):
    """The requested computation has no exact route for this environment model."""


class DegenerateModelError(UsageError):
    pass


class MalformedChainError(UsageError):
    pass


class MalformedPathError(UsageError):
    pass


class FiniteRangeError(UsageError):
    """A sampled kernel puts mass outside {|z| <= M}: the environment model is built wrong."""


class CriterionFailure(RwreError):
    exit_code = 1
