"""Exception types shared across the package."""


class ValidationError(Exception):
    """Raised when user-supplied inputs (files, flags, data) are invalid.

    The CLI maps this to exit code 2; anything else is an internal error
    (exit code 1).
    """
