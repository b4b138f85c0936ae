"""Exception types shared across the package.

The CLI maps these onto exit codes: config problems exit 2, shape
mismatches exit 3, numerical divergence exits 4.
"""


class OEForgeError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(OEForgeError):
    """A binary file does not conform to the EMB1 layout."""


class TruncationError(FormatError):
    """Declared payload extends past (or falls short of) the file size."""


class ValidationError(OEForgeError):
    """Data violates an invariant (non-finite values, bad labels, ...)."""


class ShapeError(OEForgeError):
    """Dimension mismatch between two embedding collections."""


class MissingClassError(ValidationError):
    """A declared class has no rows in a labeled set."""


class WindowUnderflowError(OEForgeError):
    """Rank window starts past the number of available candidates."""


class ParameterError(OEForgeError):
    """An operation parameter is out of its valid range."""


class DivergenceError(OEForgeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, step: int):
        self.epoch = epoch
        self.step = step
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}")


class ConfigError(OEForgeError):
    """A run configuration is missing keys or holds bad values."""
