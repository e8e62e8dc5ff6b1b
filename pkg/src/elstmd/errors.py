"""Exception classes. Each carries the CLI exit code for its failure class."""


class ElstmdError(Exception):
    exit_code = 1


class ParseError(ElstmdError, ValueError):
    exit_code = 3

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ShapeError(ElstmdError, ValueError):
    exit_code = 4


class DivergenceError(ElstmdError, ArithmeticError):
    exit_code = 5

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class UndefinedMetricError(ElstmdError, ValueError):
    exit_code = 6


class ConfigError(ElstmdError, ValueError):
    exit_code = 7


class UndefinedMetricWarning(UserWarning):
    pass
