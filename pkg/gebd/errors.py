from typing import Optional


class GEBDError(Exception):
    """Base error; carries the process exit code used by the command line."""
    exit_code = 4


class ConfigurationError(GEBDError, ValueError):
    exit_code = 2


class UsageError(ConfigurationError):
    exit_code = 2


class InputError(GEBDError, ValueError):
    exit_code = 3


class FormatError(GEBDError, ValueError):
    """Malformed file. Carries the byte offset (binary) or line number (JSON) when known."""
    exit_code = 3

    def __init__(self, message: str, offset: Optional[int] = None, line: Optional[int] = None):
        self.offset = offset
        self.line = line
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        elif line is not None:
            message = f"{message} (at line {line})"
        super().__init__(message)


class ShapeError(GEBDError, ValueError):
    exit_code = 4


class TrainingError(GEBDError, RuntimeError):
    exit_code = 4

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
