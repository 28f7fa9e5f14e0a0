"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An argument violates a documented precondition."""


class ShapeError(ValidationError):
    """Array dimensions are incompatible."""


class FormatError(ValueError):
    """A binary input does not follow the expected file format."""


class TruncationError(FormatError):
    """A binary input is shorter than its header declares."""


class ConfigError(ValueError):
    """Invalid experiment configuration; carries every violation found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DataError(RuntimeError):
    """Required data files are missing or unreadable."""


class TrainingDiverged(RuntimeError):
    """Training aborted on a non-finite loss."""
