"""Experiment settings and run reports."""

import hashlib
import json
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional

from ..config import Config, DeblurConfig, RunMode
from .errors import ConfigError

# Flat config keys -> DeblurConfig fields
_DEBLUR_KEYS = {
    "lambda": "lambda_reg",
    "gamma_rule": "gamma_rule",
    "tau": "tau_rule",
    "sigma1": "sigma1_rule",
    "sigma2": "sigma2_rule",
    "errors": "error_rule",
    "kernel_size": "kernel_size",
    "kernel_sigma": "kernel_sigma",
    "noise_sigma": "noise_sigma",
    "init_scalar": "init_scalar",
    "prox_rule": "prox_rule",
    "seed": "noise_seed",
}

# Flat config keys -> ExperimentSpec fields
_SPEC_KEYS = {
    "image": "image",
    "stop": "stop",
    "max_iters": "max_iters",
    "out": "output_dir",
    "trace_every": "trace_every",
    "reference": "reference",
    "reference_iters": "reference_iters",
    "allow_unsafe_stepsize": "allow_unsafe_stepsize",
    "allow_nonsummable_errors": "allow_nonsummable_errors",
    "timing": "record_timing",
    "criteria": "criteria",
    "toy": "toy",
}

FLAT_KEYS = sorted(set(_DEBLUR_KEYS) | set(_SPEC_KEYS))


@dataclass
class ExperimentSpec:
    """Everything one CLI invocation needs."""
    mode: RunMode = RunMode.DEBLUR
    image: str = f"synthetic:{Config.DEFAULT_SYNTHETIC_SIZE}"
    deblur: DeblurConfig = field(default_factory=DeblurConfig)
    max_iters: int = Config.DEFAULT_MAX_ITERS
    stop: Optional[str] = None
    trace_every: int = 1
    seed: Optional[int] = None
    output_dir: str = str(Config.OUTPUT_DIR)
    reference: Optional[str] = None
    reference_iters: int = Config.REFERENCE_ITERS
    allow_unsafe_stepsize: bool = False
    allow_nonsummable_errors: bool = False
    record_timing: bool = Config.TRACE_TIMING
    criteria: List[str] = field(default_factory=list)
    toy: str = "l1quad"

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = RunMode(self.mode)
        if self.max_iters < 0:
            raise ConfigError(f"max_iters must be nonnegative, got {self.max_iters}")
        if self.trace_every < 1:
            raise ConfigError(f"trace_every must be at least 1, got {self.trace_every}")
        if self.reference_iters < 1:
            raise ConfigError(f"reference_iters must be positive, got {self.reference_iters}")
        if self.seed is not None:
            self.deblur.noise_seed = self.seed

    @property
    def needs_seed(self) -> bool:
        return self.deblur.noise_sigma > 0

    @classmethod
    def from_flat(cls, data: Dict[str, Any], mode: RunMode = RunMode.DEBLUR) -> "ExperimentSpec":
        """Build from a flat key/value mapping (config file merged with flags)."""
        unknown = sorted(k for k in data if k not in _DEBLUR_KEYS and k not in _SPEC_KEYS)
        if unknown:
            raise ConfigError(
                f"Unknown config key(s): {', '.join(unknown)}. Known keys: {', '.join(FLAT_KEYS)}"
            )
        deblur_args = {_DEBLUR_KEYS[k]: v for k, v in data.items() if k in _DEBLUR_KEYS and v is not None}
        spec_args = {_SPEC_KEYS[k]: v for k, v in data.items() if k in _SPEC_KEYS and v is not None}
        if "criteria" in spec_args and isinstance(spec_args["criteria"], str):
            spec_args["criteria"] = [c for c in spec_args["criteria"].split(",") if c]
        if "output_dir" in spec_args:
            spec_args["output_dir"] = str(spec_args["output_dir"])
        seed = data.get("seed")
        return cls(mode=mode, deblur=DeblurConfig(**deblur_args), seed=seed, **spec_args)

    def to_flat(self) -> Dict[str, Any]:
        """Flat config keys that rebuild this spec through ``from_flat``."""
        deblur = self.deblur.to_dict()
        data = {key: deblur[name] for key, name in _DEBLUR_KEYS.items() if key != "seed"}
        data["seed"] = self.seed
        data.update({key: getattr(self, name) for key, name in _SPEC_KEYS.items()})
        data["criteria"] = ",".join(self.criteria)
        return {key: value for key, value in data.items() if value is not None}

    def to_dict(self) -> Dict[str, Any]:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["mode"] = self.mode.value
        data["deblur"] = self.deblur.to_dict()
        data["criteria"] = list(self.criteria)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentSpec":
        data = dict(data)
        deblur = DeblurConfig.from_dict(data.pop("deblur", {}))
        known = {f.name for f in fields(cls)}
        filtered = {k: v for k, v in data.items() if k in known}
        return cls(deblur=deblur, **filtered)

    def reference_key(self, image_digest: str) -> str:
        """Content hash of everything that determines the reference solution."""
        payload = {
            "image": self.image,
            "image_digest": image_digest,
            "deblur": self.deblur.to_dict(),
            "reference_iters": self.reference_iters,
        }
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class RunReport:
    """Summary of one solver run; serialized as a one-line JSON record."""
    method: str
    iterations: int
    stop_reason: str
    final_fval: Optional[float] = None
    final_isnr: Optional[float] = None
    cpu_seconds: float = 0.0
    trace_path: Optional[str] = None
    output_image_path: Optional[str] = None
    criterion: Optional[str] = None
    b_evaluations: Optional[int] = None
    distance: Optional[float] = None
    trace_rows: int = 0

    @property
    def b_evaluations_per_iteration(self) -> Optional[float]:
        if self.b_evaluations is None or self.iterations == 0:
            return None
        return self.b_evaluations / self.iterations

    def to_dict(self) -> Dict[str, Any]:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["b_evaluations_per_iteration"] = self.b_evaluations_per_iteration
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunReport":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)
