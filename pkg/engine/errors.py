"""
Cluster OOD Engine - Errors

Every failure raised by the engine is an OodError. The CLI maps the
subclass to a process exit code:

  1 = usage error (bad flags, bad configuration)
  2 = data error (missing files, shape / label problems, NaN)
  3 = numerical failure (factorization failed after regularization)
"""

from typing import Optional


class OodError(Exception):
    """Base class for engine errors. Carries the module that raised it."""

    exit_code = 2

    def __init__(self, message: str, module: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.module = module or "engine"

    def __str__(self) -> str:
        return f"{self.module}: {self.message}"


class UsageError(OodError):
    """Invalid arguments or configuration."""

    exit_code = 1


class DataError(OodError):
    """Input data violates a precondition."""

    exit_code = 2


class NumericalError(OodError):
    """A numerical routine failed and was not silently patched."""

    exit_code = 3
