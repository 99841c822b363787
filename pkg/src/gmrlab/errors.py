"""Exception taxonomy shared across the package."""


class GmrError(Exception):
    """Base class for all errors raised by gmrlab."""


class FormatError(GmrError):
    """A file does not conform to its declared binary format."""


class ConsistencyError(GmrError):
    """Inputs are individually valid but mutually inconsistent or empty."""


class ShapeError(GmrError):
    """Tensor dimensions do not satisfy an operation's contract."""


class ControlError(GmrError):
    """A sampling control signal is degenerate (all-zero or constant)."""


class ConfigError(GmrError):
    """An experiment or model configuration value is invalid."""


class NumericError(GmrError):
    """Training produced non-finite values; the run must abort."""
