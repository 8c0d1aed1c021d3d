"""Exception hierarchy. Exit codes: 1 usage, 2 data/format, 3 numerical."""


class MeraError(Exception):
    exit_code = 1


class UsageError(MeraError):
    """Bad flags, bad configuration values, impossible requests."""

    exit_code = 1


class ParameterError(UsageError):
    """An argument outside its documented domain (e.g. temperature <= 0)."""


class ConfigError(UsageError):
    """An inconsistent or incomplete run configuration."""


class DataError(MeraError):
    """Input data that parses but violates a contract."""

    exit_code = 2


class DimensionError(DataError):
    """Shape mismatch between two arrays; message names both shapes."""


class EmptyInputError(DataError):
    """An operation received zero rows/entries where at least one is required."""


class FormatError(DataError):
    """A malformed binary or manifest file; carries the byte offset when known."""

    def __init__(self, message: str, *, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ManifestError(DataError):
    """Dataset manifest fails validation."""


class StoreError(DataError):
    """Vector-database build rejects a record."""


class RetrievalError(DataError):
    """No eligible records for a query."""


class NormError(DataError):
    """Zero-norm vector where cosine similarity is required."""


class UndefinedMetricError(DataError):
    """A metric's preconditions (e.g. at least one positive) do not hold."""


class ParamLookupError(MeraError, KeyError):
    """A named learnable tensor is missing from the parameter store."""

    exit_code = 1

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class NumericError(MeraError):
    exit_code = 3


class TrainingError(NumericError):
    """Non-finite gradient or loss during optimization."""


class EvaluationError(NumericError):
    """Non-finite value while probing a loss function."""


class ContractError(NumericError):
    """An internal invariant was violated (e.g. backward on a non-scalar)."""
