"""Exception hierarchy. Each class carries the CLI exit code for its category."""


class FsmrError(Exception):
    """Base class; exit code 1 unless a subclass says otherwise."""

    exit_code = 1


class ConfigError(FsmrError):
    """Invalid configuration: unknown keys, bad values, inconsistent dims."""

    exit_code = 1


class UsageError(FsmrError):
    """Bad command-line invocation."""

    exit_code = 1


class DataError(FsmrError):
    """Malformed or out-of-contract input data."""

    exit_code = 2


class CapacityError(DataError):
    """Input exceeds a configured capacity (e.g. sequence length cap)."""


class CheckpointFormatError(DataError):
    """Checkpoint file does not start with the expected magic/layout."""


class UnsupportedVersionError(DataError):
    """Checkpoint format version newer than this reader."""


class CorruptCheckpointError(DataError):
    """Checkpoint file truncated or otherwise unreadable mid-stream."""


class NumericError(FsmrError):
    """Numeric contract violation: non-finite values, non-scalar loss, etc."""

    exit_code = 3


class ShapeError(NumericError):
    """Operands with incompatible shapes."""
