"""Vector primitives, SPD metric operators and metric schedules.

Vectors are 1-D float64 numpy arrays. A metric operator U is a symmetric
positive definite map with ``U >= alpha Id`` and ``||U|| <= norm_bound``; it
defines the weighted inner product <Ux, y> and norm sqrt(<Ux, x>).
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DimensionMismatchError, MetricError
from .sequences import ScalarSequence

Vec = np.ndarray

_PROBE_SEED = 20240611


def as_vec(data, what: str = "vector") -> Vec:
    """Convert ``data`` to a finite 1-D float64 array."""
    vec = np.asarray(data, dtype=np.float64)
    if vec.ndim == 0:
        vec = vec.reshape(1)
    if vec.ndim != 1:
        raise ValueError(f"{what} must be one-dimensional, got shape {vec.shape}")
    if vec.size == 0:
        raise ValueError(f"{what} must have positive dimension")
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"{what} contains non-finite entries")
    return vec


def check_dims(expected: int, vec: Vec, what: str = "vector") -> None:
    if vec.shape[0] != expected:
        raise DimensionMismatchError(expected, vec.shape[0], what)


class MetricKind(Enum):
    SCALAR = "scalar"
    DIAGONAL = "diagonal"
    DENSE = "dense"
    BLOCK = "block"


class MetricOperator(ABC):
    """Symmetric positive definite operator used as a metric."""

    kind: MetricKind

    def __init__(self, dim: int, alpha: float, norm_bound: float):
        if dim < 1:
            raise MetricError(f"Metric dimension must be positive, got {dim}")
        if not alpha > 0:
            raise MetricError(f"Lower spectral bound must be positive, got {alpha}")
        if norm_bound < alpha:
            raise MetricError(f"norm_bound {norm_bound} is below alpha {alpha}")
        self.dim = dim
        self.alpha = float(alpha)
        self.norm_bound = float(norm_bound)

    @abstractmethod
    def apply(self, x: Vec) -> Vec:
        """Return Ux."""

    @abstractmethod
    def apply_inverse(self, x: Vec) -> Vec:
        """Return U^{-1}x."""

    @abstractmethod
    def to_dense(self) -> np.ndarray:
        """Materialize U as a dim x dim matrix."""

    def diagonal(self) -> Vec:
        """Diagonal entries; exact description for structured kinds."""
        return np.diag(self.to_dense()).copy()

    @property
    def is_structured(self) -> bool:
        return self.kind in (MetricKind.SCALAR, MetricKind.DIAGONAL)


class ScalarMetric(MetricOperator):
    """U = tau * Id."""

    kind = MetricKind.SCALAR

    def __init__(self, tau: float, dim: int):
        super().__init__(dim, tau, tau)
        self.tau = float(tau)

    def apply(self, x: Vec) -> Vec:
        return self.tau * x

    def apply_inverse(self, x: Vec) -> Vec:
        return x / self.tau

    def to_dense(self) -> np.ndarray:
        return self.tau * np.eye(self.dim)

    def diagonal(self) -> Vec:
        return np.full(self.dim, self.tau)

    def __repr__(self) -> str:
        return f"ScalarMetric(tau={self.tau:g}, dim={self.dim})"


class DiagonalMetric(MetricOperator):
    """U = diag(d) with d_i > 0."""

    kind = MetricKind.DIAGONAL

    def __init__(self, d: Sequence[float]):
        d = as_vec(d, "metric diagonal")
        if np.any(d <= 0):
            raise MetricError("Diagonal metric entries must be strictly positive")
        super().__init__(d.size, float(d.min()), float(d.max()))
        self.d = d

    def apply(self, x: Vec) -> Vec:
        return self.d * x

    def apply_inverse(self, x: Vec) -> Vec:
        return x / self.d

    def to_dense(self) -> np.ndarray:
        return np.diag(self.d)

    def diagonal(self) -> Vec:
        return self.d.copy()


class DenseMetric(MetricOperator):
    """Dense SPD matrix with caller-supplied spectral bounds.

    The Cholesky factor is computed once; ``apply_inverse`` is a triangular
    solve.
    """

    kind = MetricKind.DENSE

    def __init__(self, matrix: np.ndarray, alpha: float, norm_bound: float, probes: int = 32):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise MetricError(f"Dense metric must be square, got shape {matrix.shape}")
        super().__init__(matrix.shape[0], alpha, norm_bound)
        scale = max(1.0, float(np.abs(matrix).max()))
        if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12 * scale):
            raise MetricError("Dense metric must be symmetric")
        try:
            self._factor = cho_factor(matrix)
        except np.linalg.LinAlgError:
            raise MetricError("Dense metric is not positive definite") from None
        self.matrix = matrix
        self._spot_check(probes)

    def _spot_check(self, probes: int) -> None:
        rng = np.random.default_rng(_PROBE_SEED)
        for _ in range(probes):
            x = rng.standard_normal(self.dim)
            sq = float(x @ x)
            quad = float(x @ (self.matrix @ x))
            if quad < self.alpha * sq * (1 - 1e-12) or quad > self.norm_bound * sq * (1 + 1e-12):
                raise MetricError(
                    f"Declared bounds [{self.alpha}, {self.norm_bound}] violated by a probe "
                    f"(Rayleigh quotient {quad / sq})"
                )

    def apply(self, x: Vec) -> Vec:
        return self.matrix @ x

    def apply_inverse(self, x: Vec) -> Vec:
        return cho_solve(self._factor, x)

    def to_dense(self) -> np.ndarray:
        return self.matrix.copy()


class BlockDiagonalMetric(MetricOperator):
    """U = diag(U_0, U_1, ..., U_m) acting on a concatenated vector."""

    kind = MetricKind.BLOCK

    def __init__(self, blocks: Sequence[MetricOperator]):
        if not blocks:
            raise MetricError("Block metric needs at least one block")
        self.blocks = list(blocks)
        dims = [b.dim for b in self.blocks]
        super().__init__(
            sum(dims),
            min(b.alpha for b in self.blocks),
            max(b.norm_bound for b in self.blocks),
        )
        offsets = np.cumsum([0] + dims)
        self.slices = [slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:])]

    def apply(self, x: Vec) -> Vec:
        return np.concatenate([b.apply(x[s]) for b, s in zip(self.blocks, self.slices)])

    def apply_inverse(self, x: Vec) -> Vec:
        return np.concatenate([b.apply_inverse(x[s]) for b, s in zip(self.blocks, self.slices)])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for b, s in zip(self.blocks, self.slices):
            out[s, s] = b.to_dense()
        return out


def identity_metric(dim: int) -> ScalarMetric:
    return ScalarMetric(1.0, dim)


def weighted_inner(x: Vec, y: Vec, metric: MetricOperator) -> float:
    """<Ux, y>."""
    check_dims(metric.dim, x, "x")
    check_dims(metric.dim, y, "y")
    return float(np.dot(metric.apply(x), y))


def weighted_norm(x: Vec, metric: MetricOperator) -> float:
    """sqrt(<Ux, x>)."""
    return float(np.sqrt(max(weighted_inner(x, x, metric), 0.0)))


def inverse_weighted_norm(x: Vec, metric: MetricOperator) -> float:
    """sqrt(<U^{-1}x, x>), the norm used in the quasi-Fejer estimates."""
    check_dims(metric.dim, x, "x")
    return float(np.sqrt(max(float(np.dot(metric.apply_inverse(x), x)), 0.0)))


def check_loewner_step(
    metric_next: MetricOperator,
    metric: MetricOperator,
    eta: float,
    probes: int = 64,
    seed: int = _PROBE_SEED,
) -> bool:
    """Test (1 + eta) U_next >= U in the Loewner order.

    Exact for scalar/diagonal kinds and for block metrics with matching
    structured blocks. Otherwise both are promoted to dense matrices and the
    smallest eigenvalue of (1 + eta) U_next - U is probed with random Rayleigh
    quotients: a False answer is certain, a True answer is not.
    """
    if metric_next.dim != metric.dim:
        raise DimensionMismatchError(metric.dim, metric_next.dim, "metric")
    if eta < 0:
        raise MetricError(f"eta must be nonnegative, got {eta}")

    if metric_next.is_structured and metric.is_structured:
        return bool(np.all((1.0 + eta) * metric_next.diagonal() >= metric.diagonal()))

    if (
        isinstance(metric_next, BlockDiagonalMetric)
        and isinstance(metric, BlockDiagonalMetric)
        and [b.dim for b in metric_next.blocks] == [b.dim for b in metric.blocks]
    ):
        return all(
            check_loewner_step(a, b, eta, probes, seed)
            for a, b in zip(metric_next.blocks, metric.blocks)
        )

    diff = (1.0 + eta) * metric_next.to_dense() - metric.to_dense()
    tol = 1e-12 * max(1.0, float(np.abs(diff).max()))
    rng = np.random.default_rng(seed)
    for _ in range(probes):
        x = rng.standard_normal(metric.dim)
        x /= np.linalg.norm(x)
        if float(x @ (diff @ x)) < -tol:
            return False
    return True


@dataclass(frozen=True)
class MetricSchedule:
    """Rule n -> U_n together with eta_n and the constants mu, alpha.

    ``eta_tail_bound`` is a closed-form bound on sum_n eta_n supplied by the
    constructor of the schedule.
    """
    metric_at: Callable[[int], MetricOperator]
    eta_at: Callable[[int], float]
    eta_tail_bound: float
    mu: float
    alpha: float
    dim: int

    @classmethod
    def constant(cls, metric: MetricOperator) -> "MetricSchedule":
        return cls(
            metric_at=lambda n: metric,
            eta_at=lambda n: 0.0,
            eta_tail_bound=0.0,
            mu=metric.norm_bound,
            alpha=metric.alpha,
            dim=metric.dim,
        )

    @classmethod
    def identity(cls, dim: int) -> "MetricSchedule":
        return cls.constant(identity_metric(dim))

    @classmethod
    def from_sequence(
        cls, seq: ScalarSequence, dim: int, eta_tail_bound: float = 0.0
    ) -> "MetricSchedule":
        """U_n = seq(n) * Id.

        eta_n is the smallest value making (1 + eta_n) U_{n+1} >= U_n hold
        exactly in floating point; for nondecreasing rules it is zero.
        """
        def eta_at(n: int) -> float:
            now, nxt = seq(n), seq(n + 1)
            if nxt >= now:
                return 0.0
            eta = now / nxt - 1.0
            while (1.0 + eta) * nxt < now:
                eta = float(np.nextafter(eta, np.inf))
            return eta

        return cls(
            metric_at=lambda n: ScalarMetric(seq(n), dim),
            eta_at=eta_at,
            eta_tail_bound=eta_tail_bound,
            mu=seq.sup,
            alpha=seq.inf,
            dim=dim,
        )

    @classmethod
    def block_diagonal(cls, schedules: Sequence["MetricSchedule"]) -> "MetricSchedule":
        """Product schedule diag(U_n, U_{1,n}, ..., U_{m,n})."""
        schedules = list(schedules)
        return cls(
            metric_at=lambda n: BlockDiagonalMetric([s.metric_at(n) for s in schedules]),
            eta_at=lambda n: max(s.eta_at(n) for s in schedules),
            eta_tail_bound=sum(s.eta_tail_bound for s in schedules),
            mu=max(s.mu for s in schedules),
            alpha=min(s.alpha for s in schedules),
            dim=sum(s.dim for s in schedules),
        )

    def validate(self, horizon: int) -> List[str]:
        """Check the schedule over n < horizon; return a list of violations."""
        problems = []
        eta_sum = 0.0
        current = self.metric_at(0)
        for n in range(horizon):
            nxt = self.metric_at(n + 1)
            eta = self.eta_at(n)
            if eta < 0:
                problems.append(f"n={n}: eta_n={eta} is negative")
            elif not check_loewner_step(nxt, current, eta):
                problems.append(f"n={n}: (1+eta_n) U_(n+1) >= U_n fails")
            if nxt.alpha < self.alpha * (1 - 1e-12) or nxt.norm_bound > self.mu * (1 + 1e-12):
                problems.append(f"n={n + 1}: metric bounds leave [alpha, mu]")
            eta_sum += max(eta, 0.0)
            current = nxt
        if eta_sum > self.eta_tail_bound * (1 + 1e-12) + 1e-15:
            problems.append(
                f"sum of eta_n over {horizon} steps ({eta_sum}) exceeds the "
                f"declared bound {self.eta_tail_bound}"
            )
        return problems
