"""Exception hierarchy shared by every stenlab module."""


class StenError(Exception):
    """Base class for all stenlab errors."""


class DimensionError(StenError, ValueError):
    pass


class DegenerateRowError(StenError, ValueError):
    """A softmax row has no valid position."""


class BatchTooSmallError(StenError, ValueError):
    pass


class ConfigError(StenError, ValueError):
    pass


class RangeError(StenError, ValueError):
    pass


class SchemaError(StenError, ValueError):
    pass


class UndefinedMetricError(StenError, ValueError):
    pass


class GradCheckError(StenError):
    pass


class NonFiniteGradientError(StenError, FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


class CompatibilityError(StenError):
    pass
