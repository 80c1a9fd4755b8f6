"""Exception types shared across the package."""


class SkipRecError(Exception):
    """Base class for all package errors."""


class DimensionError(SkipRecError):
    """Operand shapes are incompatible for the requested op."""


class ParameterError(SkipRecError):
    """A hyperparameter or argument is outside its legal range."""


class NumericError(SkipRecError):
    """A non-finite value appeared where finite math is required."""


class ContractError(SkipRecError):
    """A caller violated a structural precondition (index order, overlap, ...)."""


class EmptySequenceError(ContractError):
    """A sequence that must be non-empty has length zero."""


class FormatError(SkipRecError):
    """A binary or text file does not match its declared layout."""


class ConfigError(SkipRecError):
    """A run configuration is malformed or inconsistent with its inputs."""


class InfeasibleAlignmentError(SkipRecError):
    """The label sequence cannot be aligned to the available frames."""


class InputTooShortError(SkipRecError):
    """The input sequence is shorter than the operation's minimum length."""
