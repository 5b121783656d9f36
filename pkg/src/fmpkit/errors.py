"""Exception types shared across the package."""


class FmpError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(FmpError, ValueError):
    pass


class DimensionMismatch(FmpError, ValueError):
    pass


class NonPositiveInput(FmpError, ValueError):
    pass


class NonPositiveDenominator(FmpError, ValueError):
    pass


class OutOfRange(FmpError, ValueError):
    pass


class NonPositiveRate(FmpError, ValueError):
    pass


class MultiStreamNotSupported(FmpError, ValueError):
    pass


class NonPositiveTermValue(FmpError, ValueError):
    pass


class InfeasibleExpansion(FmpError):
    """Warm start of an assembled surrogate violates a constraint."""


class InfeasibleInit(FmpError):
    pass


class UnsupportedKindConfig(FmpError, ValueError):
    pass


class BelowReferenceDistance(FmpError, ValueError):
    pass


class ConfigInvalid(FmpError, ValueError):
    """Raised with the dotted path of the offending config field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
