"""Exception types shared across the package."""


class DivergenceError(RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"state became non-finite at output step {step}")


class DegenerateDataError(ValueError):
    """Generated data has zero variance in at least one dimension."""


class NumericalError(RuntimeError):
    """A linear solve or factorization failed."""


class ConfigError(ValueError):
    """A user-supplied configuration is invalid (CLI exit code 2)."""


class IntegrityError(RuntimeError):
    """A checkpoint or data file is truncated or inconsistent."""
