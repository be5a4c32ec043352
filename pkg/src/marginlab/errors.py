"""Exception types shared across the package.

Every error carries a short machine-parseable ``category`` used by the CLI
to format its one-line failure output.
"""


class MarginLabError(Exception):
    category = "internal"


class ShapeError(MarginLabError):
    """Dimension or shape mismatch between operands."""

    category = "shape"


class ConfigError(MarginLabError):
    """Invalid, unknown, or missing configuration key/value."""

    category = "config"


class DataFormatError(MarginLabError):
    """Malformed CSV/IDX input."""

    category = "data"


class CheckpointError(MarginLabError):
    """Unreadable, corrupt, or version-mismatched checkpoint file."""

    category = "checkpoint"
