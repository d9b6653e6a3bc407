"""Scalar sequence rules used for metric schedules (tau_n, sigma_{i,n}).

Rules are indexed by the iteration counter n >= 0. Rules written in terms of
k use k = n + 1, except the ``one-minus-*`` family which uses k = n + 2 so
that the first value is strictly positive.
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict

from .errors import ConfigError


@dataclass(frozen=True)
class ScalarSequence:
    """A positive scalar sequence with closed-form bounds."""
    name: str
    fn: Callable[[int], float]
    inf: float
    sup: float
    nondecreasing: bool = True

    def __call__(self, n: int) -> float:
        return self.fn(n)


def constant(value: float) -> ScalarSequence:
    if not value > 0:
        raise ConfigError(f"Constant metric value must be positive, got {value}")
    return ScalarSequence(f"const:{value:g}", lambda n: value, value, value)


def _one_minus(name: str, term: Callable[[int], float]) -> ScalarSequence:
    return ScalarSequence(name, lambda n: 1.0 - term(n + 2), 1.0 - term(2), 1.0)


def k_over_k1() -> ScalarSequence:
    return ScalarSequence("k-over-k1", lambda n: (n + 1) / (n + 2), 0.5, 1.0)


def one_plus_inv_k_pow_k() -> ScalarSequence:
    # increases from 2 towards e
    return ScalarSequence(
        "one-plus-inv-k-pow-k", lambda n: (1.0 + 1.0 / (n + 1)) ** (n + 1), 2.0, math.e
    )


_FACTORIES: Dict[str, Callable[[], ScalarSequence]] = {
    "one-minus-inv-k": lambda: _one_minus("one-minus-inv-k", lambda k: 1.0 / k),
    "one-minus-inv-k2": lambda: _one_minus("one-minus-inv-k2", lambda k: 1.0 / k ** 2),
    "one-minus-inv-k5": lambda: _one_minus("one-minus-inv-k5", lambda k: 1.0 / k ** 5),
    "one-minus-inv-kk": lambda: _one_minus("one-minus-inv-kk", lambda k: float(k) ** (-k)),
    "k-over-k1": k_over_k1,
    "one-plus-inv-k-pow-k": one_plus_inv_k_pow_k,
}

RULE_NAMES = ["const:<v>"] + sorted(_FACTORIES)


def parse_sequence_rule(text: str) -> ScalarSequence:
    """Parse a rule string such as ``const:0.1`` or ``k-over-k1``."""
    text = text.strip()
    if text.startswith("const:"):
        try:
            value = float(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"Invalid constant rule: {text}") from None
        return constant(value)
    try:
        return _FACTORIES[text]()
    except KeyError:
        raise ConfigError(
            f"Unknown sequence rule '{text}'. Known rules: {', '.join(RULE_NAMES)}"
        ) from None
