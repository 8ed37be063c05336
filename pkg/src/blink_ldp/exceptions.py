"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class BlinkError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BlinkError, ValueError):
    """Invalid parameters or experiment configuration."""


class DataError(BlinkError, ValueError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """A dataset file could not be parsed.

    The offending 1-based line number is kept in ``lineno``.
    """

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class NumericalError(BlinkError, ArithmeticError):
    """A numerical routine produced non-finite values."""


class DivergenceError(NumericalError):
    """Non-finite value encountered; ``index`` / ``epoch`` locate it when known."""

    def __init__(self, message, index=None, epoch=None):
        self.index = index
        self.epoch = epoch
        super().__init__(message)
