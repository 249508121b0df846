"""Exception hierarchy shared by all modules."""


class FinrankError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(FinrankError, ValueError):
    """Invalid configuration or input document."""


class ConstraintViolation(ConfigError):
    """A schedule parameter violates a summability constraint."""

    code = "CONSTRAINT_VIOLATION"


class AsymmetricInputError(FinrankError, ValueError):
    code = "ASYMMETRIC_INPUT"


class EstimationError(FinrankError, RuntimeError):
    """Local-polynomial fit failure.

    ``code`` is ``"EMPTY_WINDOW"`` or ``"SINGULAR_SYSTEM"``; ``update_index`` is
    filled in when the failure happens inside a detection run.
    """

    def __init__(self, code: str, message: str, update_index: int | None = None):
        super().__init__(message)
        self.code = code
        self.update_index = update_index

    def __str__(self) -> str:
        msg = f"{self.code}: {self.args[0]}"
        if self.update_index is not None:
            msg = f"update j={self.update_index}: {msg}"
        return msg
