"""Exception hierarchy shared by every module."""


class PfaError(Exception):
    """Base class for all contract violations raised by pfalign."""


class DimensionError(PfaError, ValueError):
    """Tensor shapes or layer geometries do not compose."""


class NumericError(PfaError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ContractError(PfaError, ValueError):
    """An argument violates a documented precondition."""


class StateError(PfaError, RuntimeError):
    """A cache or state entry required by an operation is missing."""


class ConfigError(PfaError, ValueError):
    """An experiment configuration is malformed or inconsistent."""


class UndefinedMetricError(PfaError, ValueError):
    """A metric is undefined for its inputs (zero norm, zero variance)."""


class DatasetError(PfaError, IOError):
    """Base class for dataset ingestion failures."""


class BadMagicError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class RecordCountError(DatasetError):
    pass


class EmptyDatasetError(DatasetError, ValueError):
    pass
