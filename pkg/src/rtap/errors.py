"""Exception hierarchy. The CLI maps these onto exit codes."""


class RtapError(Exception):
    """Base class for all package errors."""


class DataError(RtapError, ValueError):
    """Input data violates a schema or a precondition."""


class SchemaError(DataError):
    """A CSV header is missing or carries unknown columns."""


class ModelError(RtapError):
    """A persisted model cannot be used (corrupt, wrong version, wrong business)."""
