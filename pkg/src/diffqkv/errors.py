"""Exception types shared across the package."""


class DiffQKVError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DiffQKVError, ValueError):
    """A configuration value is invalid or an operation was called with an
    incompatible configuration (e.g. augmented Q requested with aug_q_dim=0)."""


class DivisibilityError(ConfigError):
    """The number of Q heads is not an exact multiple of a K/V head count."""


class DimensionError(ConfigError):
    """A dimension constraint is violated (d_k_head > d_head, odd rotary dim,
    n_q_heads * d_head != d_model, ...)."""


class ShapeError(DiffQKVError, ValueError):
    """A tensor argument does not have the shape the operation requires."""


class CapacityError(DiffQKVError, ValueError):
    """Cache constructed with a non-positive capacity."""


class CapacityExceededError(DiffQKVError, RuntimeError):
    """Append or decode would grow a cache past its reserved capacity."""


class DegenerateError(DiffQKVError, ZeroDivisionError):
    """Reduction rate requested against a base with an empty cache bracket."""


class EmptyInputError(DiffQKVError, ValueError):
    """Combine called with no non-empty partials."""


class TokenRangeError(DiffQKVError, ValueError):
    """A token id falls outside [0, vocab_size)."""


class LengthError(DiffQKVError, ValueError):
    """A token sequence is longer than the model's max_seq_len."""


class ConfigFileError(ConfigError):
    """A config file contains an unknown key, a malformed line, or is missing
    a required field."""


class UnknownSuiteError(DiffQKVError, ValueError):
    """An unrecognised verification suite name."""


class UsageError(DiffQKVError, ValueError):
    """A CLI/benchmark argument is outside its accepted range (exit code 2)."""


class DegradedPathWarning(UserWarning):
    """Emitted when KV group balancing duplicates heads: the differential
    cache advantage is forfeited because the layout degrades to GQA."""
