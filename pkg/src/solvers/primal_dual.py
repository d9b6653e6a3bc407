"""Block primal-dual splitting for

    0 in A x + C x + sum_i L_i^* B_i(L_i x - r_i) - z

and its minimization form (A = df, C = grad h, B_i = dg_i).

``step_blocks`` runs the block schedule directly. ``build_product_inclusion``
and ``product_config`` express the same iteration as Tseng-EP on the product
space H + G_1 + ... + G_m, where

    B(x, v_1, ..., v_m) = (C x + sum_i L_i^* v_i, -L_1 x, ..., -L_m x).

Both paths share the forward and resolvent helpers below and perform the
same floating-point operations, so they agree coordinate for coordinate.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import ConfigError, DimensionMismatchError, MetricError
from ..core.metric_algebra import (
    BlockDiagonalMetric,
    DiagonalMetric,
    MetricKind,
    MetricOperator,
    MetricSchedule,
    ScalarMetric,
    Vec,
    as_vec,
    identity_metric,
)
from ..core.operators import (
    LinearMap,
    LipschitzMap,
    MetricProxRule,
    Proximable,
    ProxResolvent,
    ResolventOperator,
)
from .fbf_solver import (
    ErrorSchedule,
    InclusionProblem,
    IterationDriver,
    RunResult,
    SolverConfig,
    StepSummary,
    check_config,
    ensure_finite,
)

logger = logging.getLogger(__name__)


@dataclass
class Block:
    """One composite term L_i^* B_i(L_i . - r_i).

    Give either ``B_inv_resolvent`` (J_{gamma U B_i^{-1}}) or ``g_conj_prox``
    (prox of g_i^*, evaluated in the metric through ``prox_rule``).
    """
    L: LinearMap
    r: Vec
    B_inv_resolvent: Optional[ResolventOperator] = None
    g_conj_prox: Optional[Proximable] = None
    dual_metric_schedule: Optional[MetricSchedule] = None
    prox_rule: MetricProxRule = MetricProxRule.EXACT
    name: str = "block"

    def __post_init__(self):
        self.r = as_vec(self.r, f"r[{self.name}]")
        if self.r.shape[0] != self.L.out_dim:
            raise DimensionMismatchError(self.L.out_dim, self.r.shape[0], f"r[{self.name}]")
        if (self.B_inv_resolvent is None) == (self.g_conj_prox is None):
            raise ConfigError(f"Block '{self.name}' needs exactly one of B_inv_resolvent, g_conj_prox")
        if not self.L.norm_bound > 0:
            raise ConfigError(f"Block '{self.name}' has a zero linear operator")
        schedule = self.dual_metric_schedule
        if schedule is not None and schedule.dim != self.dim:
            raise DimensionMismatchError(self.dim, schedule.dim, f"metric schedule of {self.name}")
        if self.B_inv_resolvent is None:
            self.B_inv_resolvent = ProxResolvent(self.g_conj_prox, self.prox_rule)

    @property
    def dim(self) -> int:
        return self.L.out_dim

    def schedule(self) -> MetricSchedule:
        if self.dual_metric_schedule is None:
            return MetricSchedule.identity(self.dim)
        return self.dual_metric_schedule


@dataclass
class PrimalDualProblem:
    """Primal resolvent, cocoercive-free Lipschitz part C, shift z and blocks."""
    A_resolvent: ResolventOperator
    C: LipschitzMap
    z: Vec
    blocks: List[Block] = field(default_factory=list)
    primal_metric_schedule: Optional[MetricSchedule] = None
    name: str = "primal-dual"

    def __post_init__(self):
        self.z = as_vec(self.z, "z")
        if self.C.beta < 0:
            raise ConfigError(f"Lipschitz constant of C must be nonnegative, got {self.C.beta}")
        for block in self.blocks:
            if block.L.in_dim != self.dim:
                raise DimensionMismatchError(self.dim, block.L.in_dim, f"domain of L[{block.name}]")
        schedule = self.primal_metric_schedule
        if schedule is not None and schedule.dim != self.dim:
            raise DimensionMismatchError(self.dim, schedule.dim, "primal metric schedule")

    @classmethod
    def minimization(
        cls,
        f_prox: Proximable,
        grad_h: LipschitzMap,
        z: Vec,
        blocks: Sequence[Block],
        primal_metric_schedule: Optional[MetricSchedule] = None,
        prox_rule: MetricProxRule = MetricProxRule.EXACT,
        name: str = "minimization",
    ) -> "PrimalDualProblem":
        """min f(x) + h(x) + sum_i g_i(L_i x - r_i) - <x, z>."""
        return cls(ProxResolvent(f_prox, prox_rule), grad_h, z, list(blocks),
                   primal_metric_schedule, name)

    @property
    def dim(self) -> int:
        return self.z.shape[0]

    @property
    def v0(self) -> float:
        return self.C.beta

    @property
    def total_dim(self) -> int:
        return self.dim + sum(b.dim for b in self.blocks)

    def primal_schedule(self) -> MetricSchedule:
        if self.primal_metric_schedule is None:
            return MetricSchedule.identity(self.dim)
        return self.primal_metric_schedule

    def product_schedule(self) -> MetricSchedule:
        return MetricSchedule.block_diagonal(
            [self.primal_schedule()] + [b.schedule() for b in self.blocks]
        )

    @property
    def mu(self) -> float:
        """Common bound on the norms of all metrics."""
        return self.product_schedule().mu


@dataclass
class ProductState:
    """x_n, v_{i,n}, p_{1,n-1}, p_{2,i,n-1} plus cached forward terms at p_{n-1}."""
    x: Vec
    v: List[Vec]
    p1_prev: Vec
    p2_prev: List[Vec]
    n: int = 0
    forward_prev: Optional[Vec] = None
    lp_prev: Optional[List[Vec]] = None


@dataclass
class CertificateReport:
    """Prox-based residuals of the optimality inclusions at (x, v)."""
    primal_residual: float
    dual_residuals: List[float]
    tolerance: float

    @property
    def max_residual(self) -> float:
        return max([self.primal_residual] + self.dual_residuals)

    @property
    def ok(self) -> bool:
        return self.max_residual <= self.tolerance

    def to_dict(self) -> Dict:
        return {
            "primal_residual": self.primal_residual,
            "dual_residuals": list(self.dual_residuals),
            "tolerance": self.tolerance,
            "ok": self.ok,
        }


# ---------------------------------------------------------------------------
# Shared pieces of both paths
# ---------------------------------------------------------------------------

def lipschitz_aggregate(prob: PrimalDualProblem) -> float:
    """v0 + sqrt(sum_i ||L_i||^2)."""
    return prob.v0 + math.sqrt(sum(b.L.norm_bound ** 2 for b in prob.blocks))


def _forward(prob: PrimalDualProblem, x: Vec, vs: Sequence[Vec]) -> Vec:
    """C x + sum_i L_i^* v_i, summed in block order."""
    out = prob.C.apply(x)
    for block, v in zip(prob.blocks, vs):
        out = out + block.L.adjoint_apply(v)
    return out


def _primal_resolvent(prob: PrimalDualProblem, gamma: float, metric: MetricOperator, y: Vec) -> Vec:
    return prob.A_resolvent.resolvent(gamma, metric, y + gamma * metric.apply(prob.z))


def _dual_resolvent(block: Block, gamma: float, metric: MetricOperator, y: Vec) -> Vec:
    return block.B_inv_resolvent.resolvent(gamma, metric, y - gamma * metric.apply(block.r))


def split_product(prob: PrimalDualProblem, w: Vec) -> Tuple[Vec, List[Vec]]:
    """(x, [v_1, ..., v_m]) from a product-space vector."""
    if w.shape[0] != prob.total_dim:
        raise DimensionMismatchError(prob.total_dim, w.shape[0], "product vector")
    x = w[: prob.dim]
    vs, offset = [], prob.dim
    for block in prob.blocks:
        vs.append(w[offset: offset + block.dim])
        offset += block.dim
    return x, vs


def join_product(prob: PrimalDualProblem, x: Vec, vs: Sequence[Vec]) -> Vec:
    if len(vs) != len(prob.blocks):
        raise DimensionMismatchError(len(prob.blocks), len(vs), "number of dual blocks")
    return np.concatenate([x] + list(vs))


def _split_metric(prob: PrimalDualProblem, metric: MetricOperator) -> List[MetricOperator]:
    dims = [prob.dim] + [b.dim for b in prob.blocks]
    if metric.kind is MetricKind.BLOCK:
        if [b.dim for b in metric.blocks] != dims:
            raise MetricError("Block metric does not match the primal/dual splitting")
        return list(metric.blocks)
    if metric.kind is MetricKind.SCALAR:
        return [ScalarMetric(metric.tau, d) for d in dims]
    if metric.kind is MetricKind.DIAGONAL:
        offsets = np.cumsum([0] + dims)
        return [DiagonalMetric(metric.d[a:b]) for a, b in zip(offsets[:-1], offsets[1:])]
    raise MetricError("Product resolvent needs a block-diagonal metric")


def build_product_inclusion(prob: PrimalDualProblem) -> InclusionProblem:
    """The problem as a single inclusion on the product space."""

    def product_B(w: Vec) -> Vec:
        x, vs = split_product(prob, w)
        parts = [_forward(prob, x, vs)]
        parts.extend(-block.L.apply(x) for block in prob.blocks)
        return np.concatenate(parts)

    def product_resolvent(gamma: float, metric: MetricOperator, w: Vec) -> Vec:
        x, vs = split_product(prob, w)
        metrics = _split_metric(prob, metric)
        parts = [_primal_resolvent(prob, gamma, metrics[0], x)]
        for block, Ui, v in zip(prob.blocks, metrics[1:], vs):
            parts.append(_dual_resolvent(block, gamma, Ui, v))
        return np.concatenate(parts)

    return InclusionProblem(
        A=ResolventOperator(product_resolvent, f"{prob.name}:A"),
        B=LipschitzMap(product_B, lipschitz_aggregate(prob), f"{prob.name}:B"),
        dim=prob.total_dim,
        name=f"{prob.name}[product]",
    )


def _product_error_rule(prob: PrimalDualProblem, errors: ErrorSchedule, which: str, negate_duals: bool):
    if getattr(errors, which) is None:
        return None
    sign = -1.0 if negate_duals else 1.0

    def rule(n: int, dim: int) -> Vec:
        parts = [errors.term(which, n, prob.dim)]
        parts.extend(sign * errors.term(which, n, b.dim) for b in prob.blocks)
        return np.concatenate(parts)

    return rule


def product_errors(prob: PrimalDualProblem, errors: ErrorSchedule) -> ErrorSchedule:
    """The bold (a_n, b_n, c_n) stacked over (x, v_1, ..., v_m)."""
    return ErrorSchedule(
        a=_product_error_rule(prob, errors, "a", True),
        b=_product_error_rule(prob, errors, "b", False),
        c=_product_error_rule(prob, errors, "c", True),
        summability_bound=errors.summability_bound,
        per_coordinate=errors.per_coordinate,
    )


def product_config(prob: PrimalDualProblem, config: SolverConfig) -> SolverConfig:
    """Config for running the product inclusion so it reproduces ``run_blocks``.

    The dual parts of a_n and c_n enter the product with a minus sign since
    the dual rows of the product operator are -L_i x.
    """
    return replace(config, metric_schedule=prob.product_schedule(), errors=product_errors(prob, config.errors))


# ---------------------------------------------------------------------------
# Block iteration
# ---------------------------------------------------------------------------

def initial_state(
    prob: PrimalDualProblem,
    x0: Vec,
    v0: Optional[Sequence[Vec]] = None,
    p1_prev: Optional[Vec] = None,
    p2_prev: Optional[Sequence[Vec]] = None,
) -> ProductState:
    """Duals default to zero, p_{1,-1} to x0 and p_{2,i,-1} to v_{i,0}."""
    x = as_vec(x0, "x0")
    if x.shape[0] != prob.dim:
        raise DimensionMismatchError(prob.dim, x.shape[0], "x0")
    if v0 is None:
        v = [np.zeros(b.dim) for b in prob.blocks]
    else:
        v = [as_vec(vi, f"v0[{b.name}]") for vi, b in zip(v0, prob.blocks)]
    p1 = x.copy() if p1_prev is None else as_vec(p1_prev, "p1_prev")
    p2 = [vi.copy() for vi in v] if p2_prev is None else [as_vec(pi, "p2_prev") for pi in p2_prev]

    if p1.shape[0] != prob.dim:
        raise DimensionMismatchError(prob.dim, p1.shape[0], "p1_prev")
    for label, vecs in (("v0", v), ("p2_prev", p2)):
        if len(vecs) != len(prob.blocks):
            raise DimensionMismatchError(len(prob.blocks), len(vecs), f"number of {label} blocks")
        for vec, block in zip(vecs, prob.blocks):
            if vec.shape[0] != block.dim:
                raise DimensionMismatchError(block.dim, vec.shape[0], f"{label}[{block.name}]")
    return ProductState(x, v, p1, p2)


@dataclass
class _BlockLines:
    y1: Vec
    p1: Vec
    q1: Vec
    x_next: Vec
    v_next: List[Vec]
    p2: List[Vec]
    forward: Vec
    lp: List[Vec]


def _block_lines(prob: PrimalDualProblem, state: ProductState, config: SolverConfig) -> _BlockLines:
    n = state.n
    gamma = config.gamma(n)
    errors = config.errors
    U = prob.primal_schedule().metric_at(n)
    Us = [b.schedule().metric_at(n) for b in prob.blocks]

    forward_prev = state.forward_prev
    if forward_prev is None:
        forward_prev = _forward(prob, state.p1_prev, state.p2_prev)
    lp_prev = state.lp_prev
    if lp_prev is None:
        lp_prev = [b.L.apply(state.p1_prev) for b in prob.blocks]

    a1 = errors.term("a", n, prob.dim)
    fwd = forward_prev if a1 is None else forward_prev + a1
    y1 = ensure_finite(state.x - gamma * U.apply(fwd), "y_1,n", n)

    p2 = []
    y2s = []
    for block, Ui, vi, lpi in zip(prob.blocks, Us, state.v, lp_prev):
        a2 = errors.term("a", n, block.dim)
        arg = lpi if a2 is None else lpi + a2
        y2 = ensure_finite(vi + gamma * Ui.apply(arg), "y_2,i,n", n, block.name)
        p2i = _dual_resolvent(block, gamma, Ui, y2)
        b2 = errors.term("b", n, block.dim)
        if b2 is not None:
            p2i = p2i + b2
        y2s.append(y2)
        p2.append(ensure_finite(p2i, "p_2,i,n", n, block.name))

    p1 = _primal_resolvent(prob, gamma, U, y1)
    b1 = errors.term("b", n, prob.dim)
    if b1 is not None:
        p1 = p1 + b1
    ensure_finite(p1, "p_1,n", n)

    v_next = []
    lp = []
    for block, Ui, vi, y2, p2i in zip(prob.blocks, Us, state.v, y2s, p2):
        lpi = block.L.apply(p1)
        c2 = errors.term("c", n, block.dim)
        arg = lpi if c2 is None else lpi + c2
        q2 = ensure_finite(p2i + gamma * Ui.apply(arg), "q_2,i,n", n, block.name)
        v_next.append(vi - y2 + q2)
        lp.append(lpi)

    forward = _forward(prob, p1, p2)
    c1 = errors.term("c", n, prob.dim)
    fwd = forward if c1 is None else forward + c1
    q1 = ensure_finite(p1 - gamma * U.apply(fwd), "q_1,n", n)
    x_next = ensure_finite(state.x - y1 + q1, "x_{n+1}", n)
    return _BlockLines(y1, p1, q1, x_next, v_next, p2, forward, lp)


def _advance(state: ProductState, lines: _BlockLines) -> ProductState:
    return ProductState(lines.x_next, lines.v_next, lines.p1, lines.p2,
                        state.n + 1, lines.forward, lines.lp)


def step_blocks(prob: PrimalDualProblem, state: ProductState, config: SolverConfig) -> ProductState:
    """One iteration of the block schedule.

    Order: y_1; per block y_2,i and p_2,i; p_1; per block q_2,i and v_i
    update; q_1; x_{n+1}.
    """
    return _advance(state, _block_lines(prob, state, config))


def run_blocks(
    prob: PrimalDualProblem,
    config: SolverConfig,
    state: ProductState,
    *,
    objective: Optional[Callable[[Vec], float]] = None,
    extras: Optional[Dict[str, Callable[[Vec], float]]] = None,
) -> RunResult:
    """Iterate ``step_blocks``; diagnostics and the stop rule act on the primal part.

    The solution estimate is p_{1,n}.
    """
    if config.metric_schedule is not None:
        raise ConfigError("Block runs take their metrics from the problem, not the config")
    # error terms are certified on the stacked (x, v_1, ..., v_m) vector
    check_config(replace(config, errors=product_errors(prob, config.errors)), prob.total_dim)
    logger.info("Block primal-dual on %s: dim=%d blocks=%d gamma_0=%.6g mu=%.6g beta=%.6g",
                prob.name, prob.dim, len(prob.blocks), config.gamma(0), prob.mu,
                lipschitz_aggregate(prob))

    def advance(n: int) -> StepSummary:
        nonlocal state
        current = state
        lines = _block_lines(prob, current, config)
        state = _advance(current, lines)
        return StepSummary(
            step_norm=float(np.linalg.norm(current.x - lines.x_next)),
            residual=float(np.linalg.norm(current.x - lines.p1)),
            yq_residual=float(np.linalg.norm(lines.y1 - lines.q1)),
            estimate=lines.p1,
        )

    driver = IterationDriver(config, objective, extras, f"blocks[{prob.name}]")
    trace, reason, iterations = driver.drive(advance)
    return RunResult(state.p1_prev, trace, reason, iterations, state)


def recover_certificates(prob: PrimalDualProblem, state: ProductState, tol: float = 1e-6) -> CertificateReport:
    """Residuals of z - sum L_i^* v - C x in A x and L_i x - r_i in B_i^{-1} v_i.

    Evaluated at x = p_{1,n-1}, v_i = p_{2,i,n-1} with unit step and the
    identity metric; both vanish exactly at a primal-dual solution.
    """
    x = state.p1_prev
    vs = state.p2_prev
    eye = identity_metric(prob.dim)
    shifted = x - _forward(prob, x, vs)
    primal = float(np.linalg.norm(x - _primal_resolvent(prob, 1.0, eye, shifted)))
    duals = []
    for block, v in zip(prob.blocks, vs):
        arg = v + block.L.apply(x)
        duals.append(float(np.linalg.norm(v - _dual_resolvent(block, 1.0, identity_metric(block.dim), arg))))
    report = CertificateReport(primal, duals, tol)
    logger.info("certificate residuals: primal=%.3e duals=%s", primal,
                ", ".join(f"{d:.3e}" for d in duals) or "-")
    return report
