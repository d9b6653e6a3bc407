"""Configuration for fbf-lab."""

import os
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict

from dotenv import load_dotenv

from .core.errors import ConfigError
from .core.operators import MetricProxRule

load_dotenv()


def _env_flag(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in ("1", "true", "yes", "on")


class GammaRule(Enum):
    """Constant stepsize rules of the deblurring experiments."""
    ERROR_FREE = "error-free"   # 1 / (2 beta + 0.1)
    WITH_ERROR = "with-error"   # 1 / (sqrt(10) mu (beta + 1))


class ErrorRuleKind(Enum):
    """Scalar error sequences added to a_n, b_n and c_n."""
    NONE = "none"
    INV_K2 = "inv-k2"
    INV_K5 = "inv-k5"
    INV_KK = "inv-kk"
    HALF_POW_K = "half-k"


class RunMode(Enum):
    DEBLUR = "deblur"
    BENCH = "bench"
    REFERENCE = "reference"
    TOY = "toy"


@dataclass
class DeblurConfig:
    """Parameters of one deblurring problem and its schedules."""
    lambda_reg: float = 0.003
    kernel_size: int = 9
    kernel_sigma: float = 4.0
    noise_sigma: float = 1e-3
    noise_seed: int = 0
    tau_rule: str = "const:1"
    sigma1_rule: str = "const:1"
    sigma2_rule: str = "const:1"
    gamma_rule: GammaRule = GammaRule.ERROR_FREE
    error_rule: ErrorRuleKind = ErrorRuleKind.NONE
    init_scalar: float = 0.466
    prox_rule: MetricProxRule = MetricProxRule.EXACT

    def __post_init__(self):
        if isinstance(self.gamma_rule, str):
            self.gamma_rule = _parse_enum(GammaRule, self.gamma_rule, "gamma_rule")
        if isinstance(self.error_rule, str):
            self.error_rule = _parse_enum(ErrorRuleKind, self.error_rule, "error_rule")
        if isinstance(self.prox_rule, str):
            self.prox_rule = _parse_enum(MetricProxRule, self.prox_rule, "prox_rule")
        if not self.lambda_reg > 0:
            raise ConfigError(f"lambda must be positive, got {self.lambda_reg}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if not self.kernel_sigma > 0:
            raise ConfigError(f"kernel_sigma must be positive, got {self.kernel_sigma}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")

    def to_dict(self) -> Dict[str, Any]:
        data = {}
        for f in fields(self):
            value = getattr(self, f.name)
            data[f.name] = value.value if isinstance(value, Enum) else value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DeblurConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


def _parse_enum(enum_cls, value: str, what: str):
    try:
        return enum_cls(value)
    except ValueError:
        choices = ", ".join(m.value for m in enum_cls)
        raise ConfigError(f"Invalid {what} '{value}'; expected one of: {choices}") from None


class Config:
    """Global configuration."""

    # Paths
    OUTPUT_DIR = Path(os.getenv("FBF_OUTPUT_DIR", "output"))
    CACHE_DIR = Path(os.getenv("FBF_CACHE_DIR", ".fbf_cache"))

    # Logging
    LOG_LEVEL = os.getenv("FBF_LOG_LEVEL", "WARNING")

    # Traces
    TRACE_TIMING = _env_flag("FBF_TRACE_TIMING", False)

    # Reference solutions x** are the iterate after this many Tseng-EP steps
    REFERENCE_ITERS = int(os.getenv("FBF_REFERENCE_ITERS", "10000"))

    # Defaults
    DEFAULT_MAX_ITERS = 1000
    DEFAULT_SYNTHETIC_SIZE = 64
