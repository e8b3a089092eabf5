"""Exception hierarchy. Each category carries the CLI exit code for it."""


class StimseqError(Exception):
    exit_code = 1


class ConfigError(StimseqError):
    """Bad configuration: invalid model kind, shape mismatch at build time,
    unknown config keys, impossible fold plan."""

    exit_code = 2


class DataError(StimseqError):
    """Bad data: label out of vocabulary, dimension mismatch at run time,
    empty detection list, inconsistent frame sizes."""

    exit_code = 3


class FormatError(DataError):
    """Malformed file on disk; message includes the byte offset where
    parsing failed whenever one is known."""


class StreamError(DataError):
    """Streaming-specific data problem (frame dimension mismatch, empty stats)."""


class MetricsError(DataError):
    """Metrics called on empty or inconsistent label lists."""


class TrainingError(StimseqError):
    """Non-finite loss or gradient during optimization."""

    exit_code = 4


class CheckpointError(StimseqError):
    """Checkpoint container mismatch: version, kind, or parameter table."""

    exit_code = 5
