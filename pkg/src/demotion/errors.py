"""Error types shared across the package."""


class ContractViolationError(ValueError):
    """An input violates a documented precondition (wrong domain, bad shape, ...)."""


class CoordinateRangeError(ValueError):
    """A requested sample coordinate lies outside the supported frequency range."""


class NumericalFailureError(RuntimeError):
    """A computation produced non-finite values; the message names the offender."""


class WeightFormatError(RuntimeError):
    """A weight file is truncated, has a bad magic/version, or an invalid layout."""


class ConfigMismatchError(WeightFormatError):
    """A weight file's stored architecture disagrees with the expected config."""
