"""Forward-backward-forward iterations for 0 in A x + B x.

Two engines share one driver loop:

* classical Tseng: y = J_{gA}(x - g Bx), x+ = y + g (Bx - By)
  (two fresh evaluations of B per iteration);
* Tseng with extrapolation from the past, variable metric and errors:

      y_n     = x_n - g_n U_n (B(p_{n-1}) + a_n)
      p_n     = J_{g_n U_n A}(y_n) + b_n
      q_n     = p_n - g_n U_n (B(p_n) + c_n)
      x_{n+1} = x_n - y_n + q_n

  which reuses B(p_{n-1}) and needs one fresh evaluation per iteration.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..core.errors import ConfigError, DimensionMismatchError, NonFiniteError, StepsizeError
from ..core.metric_algebra import (
    MetricOperator,
    MetricSchedule,
    Vec,
    as_vec,
    identity_metric,
    inverse_weighted_norm,
)
from ..core.operators import LipschitzMap, ResolventOperator

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["n", "step_norm", "residual", "fval"]

# Largest number of leading terms inspected when validating schedules.
VALIDATION_HORIZON = 1000

ErrorRule = Callable[[int, int], Vec]


class StopCriterion(Enum):
    STEP_NORM = "step"
    FVAL_GAP = "fval"
    DIST_TO_REF = "dist"


class StopReason(Enum):
    BUDGET = "budget"
    STEP_NORM = "step_norm"
    FVAL_GAP = "fval_gap"
    DIST_TO_REF = "dist_to_ref"


_REASON_FOR = {
    StopCriterion.STEP_NORM: StopReason.STEP_NORM,
    StopCriterion.FVAL_GAP: StopReason.FVAL_GAP,
    StopCriterion.DIST_TO_REF: StopReason.DIST_TO_REF,
}


@dataclass(frozen=True)
class StopRule:
    """Stop when the named quantity drops below ``tolerance``.

    step: ||x_n - x_{n+1}||; fval: |f(p_n) - reference_fval|;
    dist: ||p_n - reference||.
    """
    criterion: StopCriterion
    tolerance: float
    reference: Optional[Vec] = None
    reference_fval: Optional[float] = None

    @classmethod
    def parse(cls, text: str) -> "StopRule":
        """Parse ``step:1e-2``, ``fval:1e-2`` or ``dist:1e-2``."""
        try:
            name, tol = text.split(":", 1)
            rule = cls(StopCriterion(name.strip()), float(tol))
        except ValueError:
            raise ConfigError(
                f"Invalid stop rule '{text}'; expected step|fval|dist:<tolerance>"
            ) from None
        if not rule.tolerance > 0:
            raise ConfigError(f"Stop tolerance must be positive, got {rule.tolerance}")
        return rule

    def with_reference(
        self, reference: Optional[Vec] = None, reference_fval: Optional[float] = None
    ) -> "StopRule":
        return StopRule(self.criterion, self.tolerance, reference, reference_fval)


@dataclass
class InclusionProblem:
    """Find x with 0 in A x + B x; A via its resolvent, B monotone and Lipschitz."""
    A: ResolventOperator
    B: LipschitzMap
    dim: int
    name: str = "inclusion"

    @property
    def beta(self) -> float:
        return self.B.beta


@dataclass(frozen=True)
class ErrorSchedule:
    """Error sequences a_n, b_n, c_n.

    Each rule maps (n, dim) to a vector. The certificate bounds the
    Euclidean series sum_n ||e_n|| for every supplied rule; a
    ``summability_bound`` of ``None`` means no certificate. With
    ``per_coordinate`` the bound is for the scalar series filling every
    coordinate, so the certificate in dimension d is sqrt(d) times it.
    """
    a: Optional[ErrorRule] = None
    b: Optional[ErrorRule] = None
    c: Optional[ErrorRule] = None
    summability_bound: Optional[float] = 0.0
    per_coordinate: bool = False

    @classmethod
    def none(cls) -> "ErrorSchedule":
        return cls()

    @classmethod
    def from_sequence(
        cls, seq: Callable[[int], float], bound: Optional[float], terms: str = "abc"
    ) -> "ErrorSchedule":
        """Add the scalar seq(n) to every coordinate of the named terms.

        ``bound`` certifies sum_n |seq(n)|.
        """
        def rule(n: int, dim: int) -> Vec:
            return np.full(dim, seq(n))

        return cls(
            a=rule if "a" in terms else None,
            b=rule if "b" in terms else None,
            c=rule if "c" in terms else None,
            summability_bound=bound,
            per_coordinate=True,
        )

    @property
    def is_error_free(self) -> bool:
        return self.a is None and self.b is None and self.c is None

    def certificate(self, dim: int) -> Optional[float]:
        """Bound on sum_n ||e_n|| for error vectors of dimension ``dim``."""
        if self.summability_bound is None:
            return None
        if self.per_coordinate:
            return self.summability_bound * math.sqrt(dim)
        return self.summability_bound

    def term(self, which: str, n: int, dim: int) -> Optional[Vec]:
        rule = getattr(self, which)
        if rule is None:
            return None
        value = np.asarray(rule(n, dim), dtype=np.float64)
        if value.shape != (dim,):
            raise DimensionMismatchError(dim, value.size, f"error term {which}_{n}")
        return value

    def check(self, horizon: int, dim: int) -> List[str]:
        """Compare partial sums of ||e_n|| with the certificate."""
        if self.is_error_free:
            return []
        bound = self.certificate(dim)
        if bound is None:
            return ["error schedule carries no summability certificate"]
        problems = []
        for which in "abc":
            if getattr(self, which) is None:
                continue
            total = 0.0
            for n in range(horizon):
                total += float(np.linalg.norm(self.term(which, n, dim)))
            if total > bound * (1 + 1e-12):
                problems.append(
                    f"partial sum of ||{which}_n|| over {horizon} terms ({total:.6g}) exceeds "
                    f"the certificate {bound:.6g}"
                )
        return problems


@dataclass
class SolverConfig:
    """Stepsizes, metrics, errors and stopping for one run.

    ``gamma_lower`` is the declared positive lower bound certifying
    liminf gamma_n > 0; ``lambda_cap`` is the declared cap (defaults to the
    observed supremum of gamma_n over the validation horizon).
    """
    gamma: Callable[[int], float]
    gamma_lower: float
    max_iters: int
    lambda_cap: Optional[float] = None
    metric_schedule: Optional[MetricSchedule] = None
    errors: ErrorSchedule = field(default_factory=ErrorSchedule.none)
    stop: Optional[StopRule] = None
    trace_every: int = 1
    allow_nonsummable: bool = False
    record_timing: bool = True
    metric_diagnostics: bool = False

    @classmethod
    def constant_gamma(cls, gamma: float, max_iters: int, **kwargs) -> "SolverConfig":
        return cls(gamma=lambda n: gamma, gamma_lower=gamma, max_iters=max_iters, **kwargs)

    def horizon(self) -> int:
        return max(1, min(self.max_iters, VALIDATION_HORIZON))

    def metric_at(self, n: int, dim: int) -> MetricOperator:
        if self.metric_schedule is None:
            return identity_metric(dim)
        return self.metric_schedule.metric_at(n)

    @property
    def mu(self) -> float:
        return 1.0 if self.metric_schedule is None else self.metric_schedule.mu


@dataclass
class IterateState:
    """x_n and p_{n-1}; ``b_prev`` caches B(p_{n-1}) once it is known."""
    x: Vec
    p_prev: Vec
    n: int = 0
    b_prev: Optional[Vec] = None


@dataclass
class TsengEPLines:
    """Intermediates of one Tseng-EP iteration."""
    y: Vec
    p: Vec
    q: Vec
    x_next: Vec
    bp: Vec


@dataclass
class TraceRecord:
    n: int
    step_norm: float
    residual: float
    fval: Optional[float] = None
    elapsed_s: float = 0.0
    yq_residual: float = 0.0
    extras: Dict[str, float] = field(default_factory=dict)

    def to_row(self) -> Dict[str, Optional[float]]:
        row = {
            "n": self.n,
            "step_norm": self.step_norm,
            "residual": self.residual,
            "fval": self.fval,
        }
        row.update(self.extras)
        row["elapsed_s"] = self.elapsed_s
        return row


@dataclass
class StepsizeReport:
    ok: bool
    bound: float
    value: float
    rule: str
    message: str = ""


def validate_stepsize(config: SolverConfig, beta: float, mu: float, error_free: bool) -> StepsizeReport:
    """Check the stepsize schedule against the admissible bound; never raises.

    With errors: lambda_cap < 1 / (sqrt(10) mu beta). Error free:
    sup gamma_n < 1 / (2 mu beta). In both cases gamma_n must stay within
    [gamma_lower, lambda_cap] with gamma_lower > 0.
    """
    if not (beta > 0 and mu > 0):
        return StepsizeReport(False, math.nan, math.nan, "input", f"beta={beta} and mu={mu} must be positive")

    values = [config.gamma(n) for n in range(config.horizon())]
    sup = max(values)
    cap = config.lambda_cap if config.lambda_cap is not None else sup

    if not config.gamma_lower > 0:
        return StepsizeReport(False, 0.0, config.gamma_lower, "liminf",
                              "a positive lower bound on gamma_n must be declared")
    low = min(values)
    if low < config.gamma_lower:
        return StepsizeReport(False, config.gamma_lower, low, "liminf",
                              f"gamma_n={low:.6g} falls below the declared lower bound "
                              f"{config.gamma_lower:.6g}")
    if sup > cap:
        return StepsizeReport(False, cap, sup, "cap",
                              f"gamma_n={sup:.6g} exceeds the declared cap {cap:.6g}")

    if error_free:
        bound = 1.0 / (2.0 * mu * beta)
        ok = sup < bound
        rule, value = "1/(2 mu beta)", sup
    else:
        bound = 1.0 / (math.sqrt(10.0) * mu * beta)
        ok = cap < bound
        rule, value = "1/(sqrt(10) mu beta)", cap
    message = "" if ok else f"stepsize {value:.6g} violates {rule} = {bound:.6g}"
    return StepsizeReport(ok, bound, value, rule, message)


def require_valid_stepsize(config: SolverConfig, beta: float, mu: float, error_free: bool) -> StepsizeReport:
    report = validate_stepsize(config, beta, mu, error_free)
    if not report.ok:
        raise StepsizeError(report.message, report.bound, report.value)
    return report


def check_config(config: SolverConfig, dim: int) -> None:
    """Reject configurations the convergence hypotheses cannot cover."""
    if config.max_iters < 0:
        raise ConfigError(f"max_iters must be nonnegative, got {config.max_iters}")
    if config.trace_every < 1:
        raise ConfigError(f"trace_every must be at least 1, got {config.trace_every}")
    if not config.gamma_lower > 0:
        raise ConfigError("SolverConfig needs a declared positive lower bound on gamma_n")
    if not config.allow_nonsummable:
        problems = config.errors.check(config.horizon(), dim)
        if problems:
            raise ConfigError("; ".join(problems) + " (set allow_nonsummable to override)")
    if config.metric_schedule is not None and config.metric_schedule.dim != dim:
        raise DimensionMismatchError(dim, config.metric_schedule.dim, "metric schedule")
    stop = config.stop
    if stop is not None:
        if stop.criterion is StopCriterion.FVAL_GAP and stop.reference_fval is None:
            raise ConfigError("fval stopping needs a reference objective value")
        if stop.criterion is StopCriterion.DIST_TO_REF and stop.reference is None:
            raise ConfigError("dist stopping needs a reference point")


def ensure_finite(vec: Vec, line: str, n: int, block: Optional[str] = None) -> Vec:
    if not np.all(np.isfinite(vec)):
        raise NonFiniteError(line, n, block)
    return vec


# ---------------------------------------------------------------------------
# Single steps
# ---------------------------------------------------------------------------

def _classic_lines(prob: InclusionProblem, x: Vec, gamma: float) -> Tuple[Vec, Vec]:
    if not gamma * prob.beta < 1:
        raise StepsizeError(
            f"classical step needs gamma*beta < 1, got {gamma * prob.beta:.6g}",
            1.0 / prob.beta, gamma,
        )
    bx = prob.B.apply(x)
    y = prob.A.resolvent(gamma, identity_metric(prob.dim), x - gamma * bx)
    return y, y + gamma * (bx - prob.B.apply(y))


def step_tseng_classic(prob: InclusionProblem, x: Vec, gamma: float) -> Vec:
    """x+ = y + gamma (Bx - By) with y = J_{gamma A}(x - gamma Bx)."""
    return _classic_lines(prob, x, gamma)[1]


def tseng_ep_lines(prob: InclusionProblem, state: IterateState, config: SolverConfig) -> TsengEPLines:
    n = state.n
    gamma = config.gamma(n)
    metric = config.metric_at(n, prob.dim)
    errors = config.errors

    bp_prev = state.b_prev if state.b_prev is not None else prob.B.apply(state.p_prev)
    a = errors.term("a", n, prob.dim)
    forward = bp_prev if a is None else bp_prev + a
    y = ensure_finite(state.x - gamma * metric.apply(forward), "y_n", n)

    p = prob.A.resolvent(gamma, metric, y)
    b = errors.term("b", n, prob.dim)
    if b is not None:
        p = p + b
    ensure_finite(p, "p_n", n)

    bp = prob.B.apply(p)
    c = errors.term("c", n, prob.dim)
    forward = bp if c is None else bp + c
    q = ensure_finite(p - gamma * metric.apply(forward), "q_n", n)

    x_next = ensure_finite(state.x - y + q, "x_{n+1}", n)
    return TsengEPLines(y, p, q, x_next, bp)


def step_tseng_ep(prob: InclusionProblem, state: IterateState, config: SolverConfig) -> IterateState:
    """One Tseng-EP iteration; the new state carries (x_{n+1}, p_n, B(p_n))."""
    lines = tseng_ep_lines(prob, state, config)
    return IterateState(lines.x_next, lines.p, state.n + 1, lines.bp)


def step_ogda_direct(prob: InclusionProblem, p: Vec, p_prev: Vec, gamma: float) -> Vec:
    """p+ = J_{gamma A}(p - 2 gamma B(p) + gamma B(p_prev))."""
    arg = p - 2.0 * gamma * prob.B.apply(p) + gamma * prob.B.apply(p_prev)
    return prob.A.resolvent(gamma, identity_metric(prob.dim), arg)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

@dataclass
class StepSummary:
    step_norm: float
    residual: float
    yq_residual: float
    estimate: Vec
    extras: Dict[str, float] = field(default_factory=dict)


class IterationDriver:
    """Runs ``advance(n)`` until the stop rule fires or the budget is spent.

    ``objective`` is evaluated on the solution estimate for trace rows and,
    when the stop rule needs it, every iteration. ``extras`` adds named trace
    columns computed from the estimate.
    """

    def __init__(
        self,
        config: SolverConfig,
        objective: Optional[Callable[[Vec], float]] = None,
        extras: Optional[Dict[str, Callable[[Vec], float]]] = None,
        label: str = "run",
    ):
        stop = config.stop
        if stop is not None and stop.criterion is StopCriterion.FVAL_GAP and objective is None:
            raise ConfigError("fval stopping needs an objective callback")
        self.config = config
        self.objective = objective
        self.extras = extras or {}
        self.label = label

    def _stop_fired(self, summary: StepSummary, fval: Optional[float]) -> bool:
        stop = self.config.stop
        if stop is None:
            return False
        if stop.criterion is StopCriterion.STEP_NORM:
            return summary.step_norm < stop.tolerance
        if stop.criterion is StopCriterion.FVAL_GAP:
            return abs(fval - stop.reference_fval) < stop.tolerance
        return float(np.linalg.norm(summary.estimate - stop.reference)) < stop.tolerance

    def drive(self, advance: Callable[[int], StepSummary]) -> Tuple[List[TraceRecord], StopReason, int]:
        config = self.config
        needs_fval = config.stop is not None and config.stop.criterion is StopCriterion.FVAL_GAP
        trace: List[TraceRecord] = []
        reason = StopReason.BUDGET
        iterations = 0
        start = time.perf_counter()

        for n in range(config.max_iters):
            summary = advance(n)
            iterations = n + 1
            on_stride = n % config.trace_every == 0
            fval = None
            if self.objective is not None and (needs_fval or on_stride):
                fval = float(self.objective(summary.estimate))
            fired = self._stop_fired(summary, fval)
            last = fired or iterations == config.max_iters

            if on_stride or last:
                extras = dict(summary.extras)
                extras.update({name: float(fn(summary.estimate)) for name, fn in self.extras.items()})
                record = TraceRecord(
                    n=n,
                    step_norm=summary.step_norm,
                    residual=summary.residual,
                    fval=fval,
                    elapsed_s=time.perf_counter() - start if config.record_timing else 0.0,
                    yq_residual=summary.yq_residual,
                    extras=extras,
                )
                trace.append(record)
                logger.debug("%s n=%d step=%.3e residual=%.3e fval=%s",
                             self.label, n, record.step_norm, record.residual, fval)
            if fired:
                reason = _REASON_FOR[config.stop.criterion]
                break

        logger.info("%s stopped after %d iterations (%s)", self.label, iterations, reason.value)
        return trace, reason, iterations


@dataclass
class RunResult:
    solution: Vec
    trace: List[TraceRecord]
    stop_reason: StopReason
    iterations: int
    state: object = None

    def __iter__(self):
        # unpacks as (solution, trace, stop_reason)
        return iter((self.solution, self.trace, self.stop_reason))


def _norm(vec: Vec, focus: Optional[slice]) -> float:
    return float(np.linalg.norm(vec if focus is None else vec[focus]))


def run(
    prob: InclusionProblem,
    config: SolverConfig,
    x0: Vec,
    p_init: Optional[Vec] = None,
    *,
    objective: Optional[Callable[[Vec], float]] = None,
    extras: Optional[Dict[str, Callable[[Vec], float]]] = None,
    focus: Optional[slice] = None,
) -> RunResult:
    """Iterate Tseng-EP from (x0, p_{-1}); p_{-1} defaults to x0.

    Returns p_n as the solution estimate. ``focus`` restricts diagnostics,
    the objective and the stop rule to a slice of the iterate.
    """
    check_config(config, prob.dim)
    x = as_vec(x0, "x0")
    p_prev = x.copy() if p_init is None else as_vec(p_init, "p_init")
    if x.shape[0] != prob.dim:
        raise DimensionMismatchError(prob.dim, x.shape[0], "x0")
    if p_prev.shape[0] != prob.dim:
        raise DimensionMismatchError(prob.dim, p_prev.shape[0], "p_init")

    state = IterateState(x, p_prev)
    logger.info("Tseng-EP on %s: dim=%d gamma_0=%.6g mu=%.6g beta=%.6g",
                prob.name, prob.dim, config.gamma(0), config.mu, prob.beta)

    def view(vec: Vec) -> Vec:
        return vec if focus is None else vec[focus]

    def advance(n: int) -> StepSummary:
        nonlocal state
        current = state
        lines = tseng_ep_lines(prob, current, config)
        state = IterateState(lines.x_next, lines.p, current.n + 1, lines.bp)
        diag = {}
        if config.metric_diagnostics:
            diag["residual_metric"] = inverse_weighted_norm(
                current.x - lines.p, config.metric_at(current.n, prob.dim)
            )
        return StepSummary(
            step_norm=_norm(current.x - lines.x_next, focus),
            residual=_norm(current.x - lines.p, focus),
            yq_residual=_norm(lines.y - lines.q, focus),
            estimate=view(lines.p),
            extras=diag,
        )

    driver = IterationDriver(config, objective, extras, f"Tseng-EP[{prob.name}]")
    trace, reason, iterations = driver.drive(advance)
    return RunResult(state.p_prev, trace, reason, iterations, state)


def run_classic(
    prob: InclusionProblem,
    config: SolverConfig,
    x0: Vec,
    *,
    objective: Optional[Callable[[Vec], float]] = None,
    extras: Optional[Dict[str, Callable[[Vec], float]]] = None,
    focus: Optional[slice] = None,
) -> RunResult:
    """Classical Tseng iteration with the same driver; the estimate is y_n."""
    check_config(config, prob.dim)
    x = as_vec(x0, "x0")
    if x.shape[0] != prob.dim:
        raise DimensionMismatchError(prob.dim, x.shape[0], "x0")
    solution = x.copy()
    logger.info("Tseng on %s: dim=%d gamma_0=%.6g beta=%.6g",
                prob.name, prob.dim, config.gamma(0), prob.beta)

    def advance(n: int) -> StepSummary:
        nonlocal x, solution
        y, x_next = _classic_lines(prob, x, config.gamma(n))
        ensure_finite(x_next, "x_{n+1}", n)
        summary = StepSummary(
            step_norm=_norm(x - x_next, focus),
            residual=_norm(x - y, focus),
            yq_residual=_norm(x_next - y, focus),
            estimate=y if focus is None else y[focus],
        )
        x, solution = x_next, y
        return summary

    driver = IterationDriver(config, objective, extras, f"Tseng[{prob.name}]")
    trace, reason, iterations = driver.drive(advance)
    return RunResult(solution, trace, reason, iterations, x)


# ---------------------------------------------------------------------------
# Trace export
# ---------------------------------------------------------------------------

def trace_to_frame(trace: List[TraceRecord]) -> pd.DataFrame:
    """Trace as a DataFrame with columns n, step_norm, residual, fval, extras..., elapsed_s."""
    extra_names: List[str] = []
    for record in trace:
        for name in record.extras:
            if name not in extra_names:
                extra_names.append(name)
    columns = TRACE_COLUMNS + extra_names + ["elapsed_s"]
    return pd.DataFrame([r.to_row() for r in trace], columns=columns)


def write_trace(trace: List[TraceRecord], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace_to_frame(trace).to_csv(path, index=False, lineterminator="\n")
    return path
