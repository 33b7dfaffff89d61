"""Exception types shared across the harness."""


class ConfigError(ValueError):
    """Invalid run configuration (unknown format tag, bad flag combination, ...)."""


class IngestError(ValueError):
    """A benchmark file record could not be mapped to an item."""


class RegistryError(RuntimeError):
    """A referenced database is missing or cannot be opened."""


class SchemaError(RuntimeError):
    """Catalog inspection of a database failed."""


class BackendError(RuntimeError):
    """A generation backend was unreachable or returned an unusable response."""


class MetricError(ValueError):
    """A metric was requested on inputs it is undefined for."""


class SqlParseError(ValueError):
    """SQL text could not be tokenized/parsed; carries the character position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position
