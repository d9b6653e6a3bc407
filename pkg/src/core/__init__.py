from .errors import (
    ConfigError,
    DimensionMismatchError,
    ExactRecoveryError,
    MetricError,
    NonFiniteError,
    PGMFormatError,
    SplittingError,
    StepsizeError,
)

__all__ = [
    "SplittingError", "DimensionMismatchError", "MetricError", "NonFiniteError",
    "ConfigError", "StepsizeError", "ExactRecoveryError", "PGMFormatError",
]
