"""Exception hierarchy for the splitting toolkit."""

from typing import Optional


class SplittingError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(SplittingError, ValueError):
    """Two operands live in spaces of different dimension."""

    def __init__(self, expected: int, got: int, what: str = "vector"):
        self.expected = expected
        self.got = got
        super().__init__(f"Dimension mismatch for {what}: expected {expected}, got {got}")


class MetricError(SplittingError, ValueError):
    """A metric operator is not symmetric positive definite or is unsupported."""


class NonFiniteError(SplittingError, ArithmeticError):
    """A NaN or Inf showed up in an iterate."""

    def __init__(self, line: str, iteration: Optional[int] = None, block: Optional[str] = None):
        self.line = line
        self.iteration = iteration
        self.block = block
        where = f"line '{line}'"
        if block:
            where += f" of block '{block}'"
        if iteration is not None:
            where += f" at iteration {iteration}"
        super().__init__(f"Non-finite value produced by {where}")


class ConfigError(SplittingError, ValueError):
    """Invalid solver or experiment configuration."""


class StepsizeError(ConfigError):
    """The stepsize schedule violates the admissible bound."""

    def __init__(self, message: str, bound: float, value: float):
        self.bound = bound
        self.value = value
        super().__init__(message)


class ExactRecoveryError(SplittingError, ZeroDivisionError):
    """ISNR is undefined because the reconstruction equals the original."""


class PGMFormatError(SplittingError, ValueError):
    """Malformed or unsupported PGM file."""
