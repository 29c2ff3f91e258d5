"""Exception types. Each carries a short machine-readable ``category``."""


class ElqError(Exception):
    category = "error"


class FormatError(ElqError):
    """Malformed input file (bad JSON line, wrong magic bytes, truncated data)."""

    category = "format"


class DimensionMismatch(ElqError):
    category = "dimension"


class DuplicateIdError(ElqError):
    category = "duplicate_id"


class VersionMismatch(ElqError):
    category = "version"


class DataError(ElqError):
    """Input that is well-formed but unusable (empty question, unknown id, ...)."""

    category = "data"
