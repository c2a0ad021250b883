"""Exception types raised across the package."""


class CondNetError(Exception):
    """Base class for all package errors."""


class ParseError(CondNetError, ValueError):
    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class EmptyGraphError(CondNetError, ValueError):
    pass


class EmptyDatasetError(CondNetError, ValueError):
    pass


class ReferentialIntegrityError(CondNetError, ValueError):
    pass


class ConfigError(CondNetError, ValueError):
    pass


class NonFiniteError(CondNetError, FloatingPointError):
    """A gradient or loss became NaN/inf."""

    def __init__(self, name, message=None):
        self.name = name
        super().__init__(message or f"non-finite values in {name!r}")


class GradCheckError(CondNetError, AssertionError):
    pass


class CheckpointError(CondNetError, OSError):
    pass
