"""Exception hierarchy shared by the library and the CLI.

The CLI maps ``InputError`` subclasses to exit code 2 and ``NumericalError``
subclasses to exit code 3.
"""


class RadarFuseError(Exception):
    """Base class for every error raised by radarfuse."""


class InputError(RadarFuseError):
    """Bad input or a violated contract (exit code 2)."""


class ConfigurationError(InputError, ValueError):
    pass


class ContractError(InputError, ValueError):
    """An operation was applied to data it does not accept (wrong domain, bad shape)."""


class TargetOutOfRangeError(InputError, ValueError):
    def __init__(self, index: int, reason: str):
        super().__init__(f"target {index}: {reason}")
        self.index = index
        self.reason = reason


class ParseError(InputError):
    """Malformed file content. ``offset`` is a byte offset or ``line`` a 1-based line number."""

    def __init__(self, message: str, *, path=None, offset: int | None = None, line: int | None = None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        prefix = ": ".join([", ".join(where)]) + ": " if where else ""
        super().__init__(prefix + message)
        self.path = path
        self.offset = offset
        self.line = line


class DatasetError(InputError):
    pass


class FrameNotFoundError(DatasetError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NumericalError(RadarFuseError):
    """A numerically degenerate situation (exit code 3)."""


class LowSnrCalibrationError(NumericalError):
    pass


class DegenerateGeometryError(NumericalError):
    pass


class SingularFitError(NumericalError):
    pass


class EvaluationError(NumericalError):
    pass


class InvalidAngleError(NumericalError):
    pass
