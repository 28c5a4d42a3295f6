"""Exception and warning types shared across the package."""


class DriftgateError(Exception):
    """Base class for all library errors."""


class ParameterError(DriftgateError):
    """Invalid generator or model parameters."""


class SchemaError(DriftgateError):
    """CSV file does not match the expected column layout."""


class RowError(DriftgateError):
    """A CSV data row is malformed (non-numeric or non-finite sample)."""

    def __init__(self, row_index: int, message: str):
        self.row_index = row_index
        super().__init__(f"row {row_index}: {message}")


class EmptyInputError(DriftgateError):
    """An operation received an empty batch or file."""


class LengthMismatchError(DriftgateError):
    """Paired sequences have different lengths."""


class DimensionMismatchError(DriftgateError):
    """Array dimensions are incompatible (e.g. latent dim vs codebook dim)."""


class DegenerateRocError(DriftgateError):
    """ROC construction needs at least one positive and one negative sample."""


class DegenerateRocWarning(UserWarning):
    """Emitted when a correctness partition has only one class."""


class UndefinedMetricError(DriftgateError):
    """A metric is undefined for the given inputs (e.g. zero denominator)."""


class UnfittedScorerError(DriftgateError):
    """A scorer that requires fitted statistics was used before fitting."""


class SingularCovarianceError(DriftgateError):
    """Covariance matrix is not positive definite after regularization."""


class OutOfVocabularyError(DriftgateError):
    """A token index is outside the model vocabulary."""


class PrefixTooLongError(DriftgateError):
    """A token prefix exceeds the model context length."""


class TrainingDivergedError(DriftgateError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, phase: str = "train"):
        self.epoch = epoch
        self.phase = phase
        super().__init__(f"non-finite loss at epoch {epoch} ({phase})")


class ConfigError(DriftgateError):
    """Run configuration is invalid (unknown keys, bad values)."""
