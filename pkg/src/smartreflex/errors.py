"""Exception types raised across the package."""


class SmartReflexError(Exception):
    """Base class for all package errors."""


class NoRangeConfigured(SmartReflexError, KeyError):
    pass


class InvalidChronology(SmartReflexError, ValueError):
    pass


class DuplicatePatient(SmartReflexError, ValueError):
    pass


class DatasetMismatch(SmartReflexError, ValueError):
    pass


class IngestError(SmartReflexError, ValueError):
    """Row-level rejection promoted to a hard error (strict mode)."""


class EmptyCohort(SmartReflexError, ValueError):
    pass


class SchemaVersionError(SmartReflexError, ValueError):
    pass


class InsufficientData(SmartReflexError, ValueError):
    pass


class InsufficientPatients(SmartReflexError, ValueError):
    pass


class DivergenceError(SmartReflexError, ArithmeticError):
    pass


class DegenerateLabels(SmartReflexError, ValueError):
    pass


class UndefinedMetric(SmartReflexError, ValueError):
    pass


class UndefinedRate(UndefinedMetric):
    pass


class MissingParameter(SmartReflexError, ValueError):
    pass


class CalibrationFailure(SmartReflexError, RuntimeError):
    pass


class ConfigError(SmartReflexError, ValueError):
    pass
