class CatpError(Exception):
    """Base class for every error raised by the pruning pipeline."""


class InvalidArgumentError(CatpError, ValueError):
    """Shape, range or dimension mismatch in an operation's inputs."""


class InvariantError(CatpError, RuntimeError):
    """An internal bookkeeping invariant was violated."""


class ConfigParseError(CatpError, ValueError):
    """Run configuration could not be parsed or validated."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        prefix = f"line {line}: " if line else ""
        super().__init__(f"{prefix}{message}")


class WeightLoadError(CatpError, ValueError):
    """Weight file is malformed, truncated or inconsistent with the config."""


class ImageFormatError(CatpError, ValueError):
    """Image file is not a readable 8-bit PGM/PPM."""


class ValidationFailure(CatpError):
    """A numerical validation (e.g. gradient check) did not pass."""
