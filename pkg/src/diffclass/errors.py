"""Exception hierarchy shared across the package.

The CLI maps ValidationError to exit code 2 and NumericalError to exit
code 3; library callers can catch either.
"""


class DiffclassError(Exception):
    """Base class for all package errors."""


class ValidationError(DiffclassError, ValueError):
    """Invalid argument, configuration, or file content."""


class NumericalError(DiffclassError, ArithmeticError):
    """Numerical failure: non-finite values, drift, or step-size breakdown."""
