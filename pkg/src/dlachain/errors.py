"""Exception types shared across the package.

The CLI maps each class onto a process exit code.
"""


class DlachainError(Exception):
    exit_code = 1


class ValidationError(DlachainError, ValueError):
    """A parameter lies outside its domain.

    ``key`` names the offending parameter so callers can report it.
    """

    exit_code = 2

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ResourceCapError(DlachainError, RuntimeError):
    exit_code = 3


class InvariantViolation(DlachainError, AssertionError):
    exit_code = 4
