"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """Operands have incompatible widths or embedding dimensions."""


class FormatError(ValueError):
    """A serialized file is malformed (bad magic, version, or truncation)."""


class DegenerateDataError(ValueError):
    """Input data carries no usable variation (e.g. all samples identical)."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss or parameter."""


class ConfigError(ValueError):
    """A run configuration is invalid; the message names the offending key."""
