"""Exception types shared across the package.

The CLI maps each class to a distinct exit code; library code raises these
(or plain ValueError for argument misuse) and never calls sys.exit itself.
"""


class MandicastError(Exception):
    """Base class for package-level failures."""


class ConfigError(MandicastError):
    """Invalid or inconsistent run configuration."""


class DataError(MandicastError):
    """Input data is structurally unusable (zero surviving records, bad panel)."""


class FormatVersionError(MandicastError):
    """A serialized artifact declares a version this build does not speak."""


class LayoutMismatchError(MandicastError):
    """Feature layout of a model does not match the features offered to it."""
