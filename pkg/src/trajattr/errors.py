"""Exception types shared across the pipeline."""


class TrajAttrError(Exception):
    """Base class for all package errors."""


class LayoutError(TrajAttrError, ValueError):
    pass


class ContractViolation(TrajAttrError, RuntimeError):
    """Raised when an operation is called outside its precondition."""


class DatasetError(TrajAttrError, ValueError):
    pass


class TokenizationError(TrajAttrError, ValueError):
    pass


class TrainingError(TrajAttrError, RuntimeError):
    pass


class ConvergenceError(TrajAttrError, RuntimeError):
    pass


class ConfigError(TrajAttrError, ValueError):
    pass
