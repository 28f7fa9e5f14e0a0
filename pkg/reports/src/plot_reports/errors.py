"""Error types for schema and data problems."""


class SchemaError(ValueError):
    """A CSV file does not have the expected layout (missing columns etc.)."""


class DataError(RuntimeError):
    """A file parsed fine but its values are unusable for the figure."""
