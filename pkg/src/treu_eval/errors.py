"""Shared base class for the package's error types.

Every module raises its own subclass; the CLI catches the base to turn
any expected failure into exit code 1 with a one-line message.  Keeping
the base in a leaf module lets the CLI stay import-light.
"""

__all__ = ["TreuEvalError"]


class TreuEvalError(Exception):
    """Base class for all errors this package raises on purpose."""
