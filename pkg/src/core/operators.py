"""Linear maps, Lipschitz maps, proximity operators and resolvents."""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np

from .errors import DimensionMismatchError, MetricError
from .grids import GradientField
from .metric_algebra import MetricKind, MetricOperator, Vec

logger = logging.getLogger(__name__)

Step = Union[float, np.ndarray]


# ---------------------------------------------------------------------------
# Linear and Lipschitz maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearMap:
    """Bounded linear operator L: R^in_dim -> R^out_dim with its adjoint."""
    apply: Callable[[Vec], Vec]
    adjoint_apply: Callable[[Vec], Vec]
    in_dim: int
    out_dim: int
    norm_bound: float
    name: str = "L"

    @classmethod
    def identity(cls, dim: int) -> "LinearMap":
        return cls(lambda x: x.copy(), lambda y: y.copy(), dim, dim, 1.0, "Id")

    @classmethod
    def from_matrix(
        cls, matrix: np.ndarray, norm_bound: Optional[float] = None, name: str = "matrix"
    ) -> "LinearMap":
        matrix = np.asarray(matrix, dtype=np.float64)
        if norm_bound is None:
            norm_bound = float(np.linalg.norm(matrix, 2))
        transposed = matrix.T.copy()
        return cls(
            lambda x: matrix @ x,
            lambda y: transposed @ y,
            matrix.shape[1],
            matrix.shape[0],
            norm_bound,
            name,
        )

    def materialize(self) -> np.ndarray:
        """Dense matrix of the map, column by column."""
        eye = np.eye(self.in_dim)
        return np.column_stack([self.apply(eye[:, j]) for j in range(self.in_dim)])


@dataclass(frozen=True)
class LipschitzMap:
    """Single-valued monotone map with Lipschitz constant ``beta``."""
    fn: Callable[[Vec], Vec]
    beta: float
    name: str = "B"

    def apply(self, x: Vec) -> Vec:
        return self.fn(x)

    @classmethod
    def zero(cls) -> "LipschitzMap":
        return cls(lambda x: np.zeros_like(x), 0.0, "zero")

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, name: str = "linear") -> "LipschitzMap":
        """x -> Mx; monotone when the symmetric part of M is PSD."""
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(lambda x: matrix @ x, float(np.linalg.norm(matrix, 2)), name)


class CountedMap(LipschitzMap):
    """LipschitzMap that counts its evaluations."""

    def __init__(self, inner: LipschitzMap):
        object.__setattr__(self, "fn", inner.fn)
        object.__setattr__(self, "beta", inner.beta)
        object.__setattr__(self, "name", inner.name)
        object.__setattr__(self, "calls", 0)

    def apply(self, x: Vec) -> Vec:
        object.__setattr__(self, "calls", self.calls + 1)
        return self.fn(x)


def counted(op: LipschitzMap) -> CountedMap:
    return CountedMap(op)


def grad_quadratic(x: Vec, lam: float) -> Vec:
    """Gradient of lam * ||x||^2."""
    return 2.0 * lam * x


def quadratic_gradient(lam: float) -> LipschitzMap:
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    return LipschitzMap(lambda x: grad_quadratic(x, lam), 2.0 * lam, "grad_quadratic")


# ---------------------------------------------------------------------------
# Proximity operators
# ---------------------------------------------------------------------------

class ProxKind(Enum):
    ZERO = "zero"
    BOX01 = "box01"
    ABS = "abs"
    L1_TRANSLATED = "l1_translated"
    L1_CONJ_TRANSLATED = "l1_conj_translated"
    TV_DUAL_BALL = "tv_dual_ball"
    CONJUGATE = "conjugate"
    CUSTOM = "custom"


class MetricProxRule(Enum):
    """How prox_{gamma f} relative to the metric (tau Id)^{-1} is evaluated.

    EXACT evaluates the definition: argmin f(y) + ||y - x||^2 / (2 tau gamma),
    i.e. prox_{tau gamma f}(x). SCALED evaluates tau * prox_{tau gamma f}(x / tau),
    which agrees with EXACT only for tau = 1 and for indicators of cones.
    """
    EXACT = "exact"
    SCALED = "scaled"


def _check_step(gamma: Step) -> None:
    if not np.all(np.asarray(gamma) > 0):
        raise ValueError("prox step must be positive")


@dataclass(frozen=True)
class Proximable:
    """Closed-form proximity operator (gamma, x) -> prox_{gamma f}(x).

    ``separable`` means the prox acts coordinatewise, so a vector of steps
    (a diagonal metric) is allowed.
    """
    fn: Callable[[Step, Vec], Vec]
    kind: ProxKind
    name: str
    separable: bool = True

    def prox(self, gamma: Step, x: Vec) -> Vec:
        _check_step(gamma)
        return self.fn(gamma, x)


def soft_threshold(t: Vec, gamma: Step) -> Vec:
    """sign(t) * max(|t| - gamma, 0) with sign(0) = 0."""
    return np.sign(t) * np.maximum(np.abs(t) - gamma, 0.0)


def prox_box01(x: Vec) -> Vec:
    return np.clip(x, 0.0, 1.0)


def prox_l1_conj(p: Vec, gamma: Step, b: Vec) -> Vec:
    """prox of gamma * g1^* with g1 = ||. - b||_1: clamp p - gamma b to [-1, 1]."""
    if p.shape != b.shape:
        raise DimensionMismatchError(b.shape[0], p.shape[0], "p")
    _check_step(gamma)
    return np.clip(p - gamma * b, -1.0, 1.0)


def prox_l1_translated(y: Vec, gamma: Step, b: Vec) -> Vec:
    """prox of gamma * ||. - b||_1."""
    if y.shape != b.shape:
        raise DimensionMismatchError(b.shape[0], y.shape[0], "y")
    _check_step(gamma)
    return b + soft_threshold(y - b, gamma)


def project_pairs(p: np.ndarray, q: np.ndarray, lam: float):
    """Radial projection of each pair (p_ij, q_ij) onto the disc of radius lam."""
    scale = lam / np.maximum(lam, np.sqrt(p ** 2 + q ** 2))
    return p * scale, q * scale


def project_tv_dual_ball(field: GradientField, lam: float) -> GradientField:
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    p, q = project_pairs(field.p, field.q, lam)
    return GradientField(p, q)


def zero_prox() -> Proximable:
    return Proximable(lambda gamma, x: x.copy(), ProxKind.ZERO, "zero")


def box01_prox() -> Proximable:
    return Proximable(lambda gamma, x: prox_box01(x), ProxKind.BOX01, "box01")


def abs_prox() -> Proximable:
    return Proximable(lambda gamma, x: soft_threshold(x, gamma), ProxKind.ABS, "abs")


def l1_translated_prox(b: Vec) -> Proximable:
    return Proximable(
        lambda gamma, y: prox_l1_translated(y, gamma, b), ProxKind.L1_TRANSLATED, "l1_translated"
    )


def l1_conj_prox(b: Vec) -> Proximable:
    return Proximable(
        lambda gamma, p: prox_l1_conj(p, gamma, b), ProxKind.L1_CONJ_TRANSLATED, "l1_conj"
    )


def tv_dual_ball_prox(lam: float, shape) -> Proximable:
    """Projection onto {max_ij |(p_ij, q_ij)| <= lam} acting on flattened fields."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    n = shape[0] * shape[1]

    def fn(gamma, w):
        if w.shape[0] != 2 * n:
            raise DimensionMismatchError(2 * n, w.shape[0], "gradient field")
        p, q = project_pairs(w[:n], w[n:], lam)
        return np.concatenate([p, q])

    return Proximable(fn, ProxKind.TV_DUAL_BALL, "tv_dual_ball", separable=False)


def prox_with_metric(
    fprox: Proximable,
    gamma: float,
    tau: Step,
    x: Vec,
    rule: MetricProxRule = MetricProxRule.EXACT,
) -> Vec:
    """prox_{gamma f} relative to the metric (tau Id)^{-1}."""
    _check_step(gamma)
    _check_step(tau)
    if rule is MetricProxRule.EXACT:
        return fprox.prox(tau * gamma, x)
    return tau * fprox.prox(tau * gamma, x / tau)


def resolvent_of_inverse(bprox: Proximable, gamma: Step, x: Vec) -> Vec:
    """J_{gamma (dg)^{-1}} = prox_{gamma g^*} through the Moreau decomposition."""
    _check_step(gamma)
    return x - gamma * bprox.prox(1.0 / gamma, x / gamma)


def conjugate_prox(g: Proximable) -> Proximable:
    return Proximable(
        lambda gamma, x: resolvent_of_inverse(g, gamma, x),
        ProxKind.CONJUGATE,
        f"{g.name}*",
        separable=g.separable,
    )


# ---------------------------------------------------------------------------
# Resolvents
# ---------------------------------------------------------------------------

class ResolventOperator:
    """Maximally monotone operator given through J_{gamma U A}.

    ``fn(gamma, metric, x)`` must return J_{gamma U A}(x) =
    (U^{-1} + gamma A)^{-1}(U^{-1} x) in closed form.
    """

    def __init__(self, fn: Callable[[float, MetricOperator, Vec], Vec], name: str = "A"):
        self._fn = fn
        self.name = name

    def resolvent(self, gamma: float, metric: MetricOperator, x: Vec) -> Vec:
        if not gamma > 0:
            raise ValueError(f"resolvent step must be positive, got {gamma}")
        if x.shape[0] != metric.dim:
            raise DimensionMismatchError(metric.dim, x.shape[0], f"argument of J[{self.name}]")
        return self._fn(gamma, metric, x)

    @classmethod
    def zero(cls) -> "ResolventOperator":
        """A = 0, whose resolvent is the identity."""
        return cls(lambda gamma, metric, x: x.copy(), "zero")


class ProxResolvent(ResolventOperator):
    """Resolvent of A = df for a proximable f, with scalar or diagonal metrics."""

    def __init__(self, prox: Proximable, rule: MetricProxRule = MetricProxRule.EXACT):
        self.prox = prox
        self.rule = rule
        super().__init__(self._evaluate, prox.name)

    def _evaluate(self, gamma: float, metric: MetricOperator, x: Vec) -> Vec:
        if metric.kind is MetricKind.SCALAR:
            return prox_with_metric(self.prox, gamma, metric.tau, x, self.rule)
        if metric.kind is MetricKind.DIAGONAL:
            if not self.prox.separable:
                raise MetricError(
                    f"prox '{self.prox.name}' is not separable; diagonal metrics are unsupported"
                )
            return prox_with_metric(self.prox, gamma, metric.d, x, self.rule)
        raise MetricError(
            f"No closed-form prox of '{self.prox.name}' for {metric.kind.value} metrics; "
            "supply a ResolventOperator instead"
        )


# ---------------------------------------------------------------------------
# Certification helpers
# ---------------------------------------------------------------------------

def power_iteration_norm(L: LinearMap, iters: int = 100, seed: int = 0, tol: float = 1e-12) -> float:
    """Estimate ||L|| = sqrt(lambda_max(L^T L)) by power iteration on L^T L.

    The estimate ||L x_k|| with unit x_k is nondecreasing in k and never
    exceeds ||L||. Stops early when it changes by less than ``tol`` relative.
    """
    if iters < 1:
        raise ValueError(f"iters must be at least 1, got {iters}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(L.in_dim)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for k in range(iters):
        y = L.apply(x)
        current = float(np.linalg.norm(y))
        if current == 0.0:
            return 0.0
        z = L.adjoint_apply(y)
        nz = float(np.linalg.norm(z))
        if nz == 0.0:
            return current
        x = z / nz
        if abs(current - estimate) <= tol * current:
            logger.debug("Power iteration for %s stagnated after %d iterations", L.name, k + 1)
            return current
        estimate = current
    return estimate


def adjoint_mismatch(L: LinearMap, trials: int = 100, seed: int = 0) -> float:
    """max |<Lx, y> - <x, L^T y>| / (1 + ||x|| ||y||) over random pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(L.in_dim)
        y = rng.standard_normal(L.out_dim)
        gap = abs(float(np.dot(L.apply(x), y)) - float(np.dot(x, L.adjoint_apply(y))))
        worst = max(worst, gap / (1.0 + np.linalg.norm(x) * np.linalg.norm(y)))
    return worst


def sample_lipschitz(op: LipschitzMap, dim: int, trials: int = 100, seed: int = 0) -> float:
    """Largest observed ||B(x) - B(y)|| / ||x - y||."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x, y = rng.standard_normal(dim), rng.standard_normal(dim)
        worst = max(worst, np.linalg.norm(op.apply(x) - op.apply(y)) / np.linalg.norm(x - y))
    return float(worst)


def sample_monotonicity(op: LipschitzMap, dim: int, trials: int = 100, seed: int = 0) -> float:
    """Smallest observed <B(x) - B(y), x - y>."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(trials):
        x, y = rng.standard_normal(dim), rng.standard_normal(dim)
        worst = min(worst, float(np.dot(op.apply(x) - op.apply(y), x - y)))
    return float(worst)


def sample_firm_nonexpansiveness(
    prox: Proximable, gamma: float, dim: int, trials: int = 100, seed: int = 0, scale: float = 3.0
) -> float:
    """Smallest observed <Px - Py, x - y> - ||Px - Py||^2 (nonnegative when firm)."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(trials):
        x, y = scale * rng.standard_normal(dim), scale * rng.standard_normal(dim)
        dp = prox.prox(gamma, x) - prox.prox(gamma, y)
        worst = min(worst, float(np.dot(dp, x - y) - np.dot(dp, dp)))
    return float(worst)
