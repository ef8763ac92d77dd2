"""Exception hierarchy shared by every module."""


class ZeroNoiseError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(ZeroNoiseError, ValueError):
    pass


class NonFiniteOutput(ZeroNoiseError, FloatingPointError):
    pass


class MissingJacobian(ZeroNoiseError, ValueError):
    pass


class StratonovichNotConverted(ZeroNoiseError, ValueError):
    pass


class BlowUp(ZeroNoiseError, FloatingPointError):
    """State norm exceeded the configured bound during integration."""

    def __init__(self, message, time=None, path_index=None):
        super().__init__(message)
        self.time = time
        self.path_index = path_index


class DtDoesNotDivideTau(ZeroNoiseError, ValueError):
    pass


class KappaOutOfRange(ZeroNoiseError, ValueError):
    pass


class EmptyCandidateSet(ZeroNoiseError, ValueError):
    pass


class UnknownModel(ZeroNoiseError, KeyError):
    pass


class BadParams(ZeroNoiseError, ValueError):
    pass


class MissingNoiseRecord(ZeroNoiseError, ValueError):
    pass


class JumpsUnsupported(ZeroNoiseError, ValueError):
    pass


class DegenerateDiffusion(ZeroNoiseError, FloatingPointError):
    pass


class PathError(ZeroNoiseError, RuntimeError):
    """Wraps an error raised while simulating one ensemble member."""

    def __init__(self, path_index, cause):
        super().__init__(f"path {path_index}: {cause}")
        self.path_index = path_index
        self.cause = cause
