"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`SASolverError`
and from the builtin it most resembles, so callers can catch either.
"""


class SASolverError(Exception):
    pass


class OutOfDomain(SASolverError, ValueError):
    """A time lies outside the schedule's ``[t_eps, T]`` domain."""


class OutOfRange(SASolverError, ValueError):
    """A log-SNR or sigma value is not attained by the schedule."""


class InvalidParams(SASolverError, ValueError):
    pass


class InvalidEta(SASolverError, ValueError):
    pass


class DimensionError(SASolverError, ValueError):
    pass


class DegenerateNodes(SASolverError, ValueError):
    pass


class InsufficientHistory(SASolverError, ValueError):
    pass


class NonConstantTau(SASolverError, ValueError):
    pass


class NonVPSchedule(SASolverError, ValueError):
    pass


class GridTooShort(SASolverError, ValueError):
    pass


class PathCoverage(SASolverError, ValueError):
    pass


class NonAffineModel(SASolverError, ValueError):
    pass


class InsufficientLevels(SASolverError, ValueError):
    pass


class ParseError(SASolverError, ValueError):
    """Config file problem; ``lineno`` is 1-based when known."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class UnknownKey(ParseError):
    pass
