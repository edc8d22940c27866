"""Failure classes shared across the pipeline, mapped to CLI exit codes."""


class SessrecError(Exception):
    """Base class; carries the process exit code for the CLI layer."""

    exit_code = 4


class ConfigError(SessrecError):
    """Bad configuration: invalid sizes, conflicting flags, unknown keys."""

    exit_code = 2


class DataError(SessrecError):
    """Unreadable input, schema violations, empty corpora, bad splits."""

    exit_code = 3


class CheckpointError(SessrecError):
    """Checkpoint missing, corrupted, or version-incompatible."""

    exit_code = 3


class TrainingDiverged(SessrecError):
    """Non-finite loss encountered during optimization."""

    exit_code = 4
