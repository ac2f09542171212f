"""Exception types.  Each maps to a distinct CLI exit code."""


class MIMError(Exception):
    exit_code = 1


class ConfigError(MIMError, ValueError):
    exit_code = 2


class CheckpointError(MIMError):
    exit_code = 3


class VersionMismatchError(CheckpointError):
    pass


class TruncatedBlobError(CheckpointError):
    pass


class OffsetOverrunError(CheckpointError):
    pass


class NumericalError(MIMError, FloatingPointError):
    exit_code = 4
