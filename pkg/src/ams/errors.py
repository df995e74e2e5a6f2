"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class LedgerError(ValueError):
    """Attribution intervals are unsorted, overlapping, or reference unknown arms."""


class OrderingError(ValueError):
    """A record's timestamp precedes the last record of the same type."""


class ClockError(RuntimeError):
    """The clock moved backwards."""


class ConfigError(ValueError):
    pass


class SchemaVersionError(ValueError):
    pass


class LogParseError(ValueError):
    """A log line could not be parsed.

    ``line`` is 1-based. ``events`` and ``decisions`` hold everything parsed
    before the bad line so callers can salvage a truncated log.
    """

    def __init__(self, path, line, reason, events=None, decisions=None):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line
        self.reason = reason
        self.events = events
        self.decisions = decisions if decisions is not None else []
