"""Exception hierarchy shared by every module."""


class ReDimNetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ReDimNetError, ValueError):
    """Invalid configuration, shape or hyperparameter."""


class InputError(ReDimNetError, ValueError):
    """Invalid user data: audio, embeddings, trial lists."""


class NumericError(ReDimNetError, ArithmeticError):
    """NaN/Inf or a degenerate statistic."""


class StateError(ReDimNetError, RuntimeError):
    """An object is used before it is ready."""


class UsageError(ReDimNetError, RuntimeError):
    """An API is called in a way it does not support."""


class FormatError(ReDimNetError, ValueError):
    """A binary or text file does not match its declared layout."""
