"""Experiment service: the work behind the deblur, bench, reference and toy commands.

Every entry point validates its spec completely (image source, seed,
stepsize gate, error certificates) before any file is written.
"""

import hashlib
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..config import Config, ErrorRuleKind
from ..core.errors import ConfigError, PGMFormatError, StepsizeError
from ..core.grids import ImageGrid
from ..core.metric_algebra import Vec
from ..core.models import ExperimentSpec, RunReport
from ..core.operators import LipschitzMap, ProxResolvent, ResolventOperator, abs_prox, counted, prox_box01
from ..core.reference_store import ReferenceEntry, ReferenceStore
from ..imaging.deblur import DeblurInstance, assemble_deblur
from ..imaging.pgm import read_pgm, write_pgm
from ..imaging.phantom import parse_image_source, synthetic_phantom
from ..solvers.fbf_solver import (
    InclusionProblem,
    RunResult,
    SolverConfig,
    StepsizeReport,
    StopCriterion,
    StopRule,
    run,
    run_classic,
    validate_stepsize,
    write_trace,
)
from ..solvers.primal_dual import (
    build_product_inclusion,
    join_product,
    product_config,
    run_blocks,
)
from ..utils.file_handler import FileHandler

logger = logging.getLogger(__name__)

# flat config written next to the outputs; replays the run through --config
RUN_CONFIG_NAME = "run_config.yaml"


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------

def load_image(source: str) -> Tuple[ImageGrid, str]:
    """Image and content digest for ``synthetic:<N>`` or a PGM path."""
    size = parse_image_source(source)
    if size is not None:
        digest = hashlib.sha256(source.encode("utf-8")).hexdigest()
        return synthetic_phantom(size), digest
    path = Path(source)
    if not path.exists():
        raise PGMFormatError(f"Image not found: {path}")
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    return read_pgm(path), digest


def validate_spec(spec: ExperimentSpec) -> None:
    if spec.needs_seed and spec.seed is None:
        raise ConfigError("--seed is required when noise_sigma > 0")


def build_instance(spec: ExperimentSpec) -> Tuple[DeblurInstance, str]:
    validate_spec(spec)
    original, digest = load_image(spec.image)
    return assemble_deblur(original, spec.deblur), digest


def stepsize_gate(instance: DeblurInstance, config: SolverConfig, allow_unsafe: bool) -> StepsizeReport:
    """Refuse a stepsize rule that does not match its bound unless overridden."""
    error_free = instance.cfg.error_rule is ErrorRuleKind.NONE
    report = validate_stepsize(config, instance.beta, instance.mu, error_free)
    if not report.ok:
        if not allow_unsafe:
            raise StepsizeError(
                f"{report.message} (gamma rule '{instance.cfg.gamma_rule.value}', "
                f"errors '{instance.cfg.error_rule.value}'); pass --allow-unsafe-stepsize to run anyway",
                report.bound, report.value,
            )
        logger.warning("running with an unsafe stepsize: %s", report.message)
    return report


def deblur_config(spec: ExperimentSpec, instance: DeblurInstance, max_iters: int,
                  stop: Optional[StopRule] = None) -> SolverConfig:
    return instance.solver_config(
        max_iters,
        stop=stop,
        trace_every=spec.trace_every,
        allow_nonsummable=spec.allow_nonsummable_errors,
        record_timing=spec.record_timing,
    )


# ---------------------------------------------------------------------------
# Reference solutions
# ---------------------------------------------------------------------------

def compute_reference(spec: ExperimentSpec, store: Optional[ReferenceStore] = None,
                      instance: Optional[DeblurInstance] = None,
                      digest: Optional[str] = None) -> ReferenceEntry:
    """x** after exactly ``reference_iters`` Tseng-EP iterations, cached by content hash."""
    store = store or ReferenceStore(Config.CACHE_DIR)
    if instance is None:
        instance, digest = build_instance(spec)
    key = spec.reference_key(digest)
    cached = store.load(key)
    if cached is not None:
        logger.info("reference %s found in cache", key[:12])
        return cached

    config = deblur_config(spec, instance, spec.reference_iters)
    config.record_timing = False
    stepsize_gate(instance, config, spec.allow_unsafe_stepsize)
    result = run_blocks(instance.problem, config, instance.initial_state())
    fval = instance.monitored_objective(result.solution)
    store.save(key, result.solution, fval, {
        "image": spec.image,
        "iterations": result.iterations,
        "deblur": spec.deblur.to_dict(),
    })
    return store.load(key)


def load_reference(spec: ExperimentSpec, instance: DeblurInstance, digest: str,
                   store: Optional[ReferenceStore] = None) -> Tuple[Vec, float]:
    if spec.reference:
        path = Path(spec.reference)
        if not path.exists():
            raise ConfigError(f"Reference solution not found: {path}")
        solution = np.load(path, allow_pickle=False)
        if solution.size != instance.problem.dim:
            raise ConfigError(f"Reference {path} has {solution.size} entries, expected {instance.problem.dim}")
        return solution, instance.monitored_objective(solution)
    entry = compute_reference(spec, store, instance, digest)
    return entry.solution, entry.fval


def resolve_stop(text: Optional[str], spec: ExperimentSpec, instance: DeblurInstance, digest: str,
                 store: Optional[ReferenceStore] = None) -> Optional[StopRule]:
    if not text:
        return None
    rule = StopRule.parse(text)
    if rule.criterion is StopCriterion.STEP_NORM:
        return rule
    reference, fval = load_reference(spec, instance, digest, store)
    return rule.with_reference(reference, fval)


# ---------------------------------------------------------------------------
# deblur
# ---------------------------------------------------------------------------

def _summarize(method: str, result: RunResult, instance: DeblurInstance, cpu: float,
               trace_path: Optional[Path], image_path: Optional[Path],
               criterion: Optional[str] = None, b_evaluations: Optional[int] = None) -> RunReport:
    return RunReport(
        method=method,
        iterations=result.iterations,
        stop_reason=result.stop_reason.value,
        final_fval=instance.monitored_objective(result.solution),
        final_isnr=instance.isnr_of(result.solution),
        cpu_seconds=cpu,
        trace_path=str(trace_path) if trace_path else None,
        output_image_path=str(image_path) if image_path else None,
        criterion=criterion,
        b_evaluations=b_evaluations,
        trace_rows=len(result.trace),
    )


def run_deblur(spec: ExperimentSpec, store: Optional[ReferenceStore] = None) -> RunReport:
    instance, digest = build_instance(spec)
    stepsize_gate(instance, deblur_config(spec, instance, spec.max_iters), spec.allow_unsafe_stepsize)
    stop = resolve_stop(spec.stop, spec, instance, digest, store)
    config = deblur_config(spec, instance, spec.max_iters, stop)

    start = time.process_time()
    result = run_blocks(
        instance.problem, config, instance.initial_state(),
        objective=instance.monitored_objective,
        extras={"isnr": instance.isnr_of},
    )
    cpu = time.process_time() - start

    out = Path(spec.output_dir)
    trace_path = write_trace(result.trace, out / "deblur_trace.csv")
    recon = ImageGrid.from_flat(prox_box01(result.solution), instance.shape)
    image_path = write_pgm(out / "deblur_reconstruction.pgm", recon)
    write_pgm(out / "deblur_observed.pgm", instance.observed)
    FileHandler.save_yaml(out / RUN_CONFIG_NAME, spec.to_flat())
    report = _summarize("tseng-ep", result, instance, cpu, trace_path, image_path, spec.stop)
    logger.info("deblur finished: %d iterations, ISNR %.4f dB", report.iterations, report.final_isnr)
    return report


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def _counted_product(instance: DeblurInstance) -> Tuple[InclusionProblem, LipschitzMap]:
    product = build_product_inclusion(instance.problem)
    counter = counted(product.B)
    return InclusionProblem(product.A, counter, product.dim, product.name), counter


def run_bench(spec: ExperimentSpec, store: Optional[ReferenceStore] = None) -> List[RunReport]:
    """Classical Tseng against Tseng-EP under each stopping criterion.

    Both run on the product-space inclusion with an instrumented B so the
    reports carry the number of forward evaluations. Traces are written
    only once every run has finished.
    """
    if not spec.criteria:
        return []
    instance, digest = build_instance(spec)
    stepsize_gate(instance, deblur_config(spec, instance, spec.max_iters), spec.allow_unsafe_stepsize)
    rules = [resolve_stop(text, spec, instance, digest, store) for text in spec.criteria]
    problem = instance.problem

    state = instance.initial_state()
    x0 = join_product(problem, state.x, state.v)
    p_init = join_product(problem, state.p1_prev, state.p2_prev)
    focus = slice(0, problem.dim)
    finished = []

    for text, rule in zip(spec.criteria, rules):
        tag = text.split(":", 1)[0]

        product, counter = _counted_product(instance)
        classic_config = SolverConfig.constant_gamma(
            instance.gamma(), spec.max_iters, stop=rule,
            trace_every=spec.trace_every, record_timing=spec.record_timing,
        )
        start = time.process_time()
        result = run_classic(product, classic_config, x0, objective=instance.monitored_objective,
                             extras={"isnr": instance.isnr_of}, focus=focus)
        finished.append(("tseng", f"bench_{tag}_tseng.csv", text, result,
                         time.process_time() - start, counter.calls))

        product, counter = _counted_product(instance)
        ep_config = product_config(problem, deblur_config(spec, instance, spec.max_iters, rule))
        start = time.process_time()
        result = run(product, ep_config, x0, p_init, objective=instance.monitored_objective,
                     extras={"isnr": instance.isnr_of}, focus=focus)
        finished.append(("tseng-ep", f"bench_{tag}_tseng_ep.csv", text, result,
                         time.process_time() - start, counter.calls))

    out = Path(spec.output_dir)
    reports = []
    for method, name, text, result, cpu, calls in finished:
        path = write_trace(result.trace, out / name)
        reports.append(_summarize(method, result, instance, cpu, path, None, text, calls))
    FileHandler.save_yaml(out / RUN_CONFIG_NAME, spec.to_flat())
    return reports


# ---------------------------------------------------------------------------
# toy problems
# ---------------------------------------------------------------------------

@dataclass
class ToyProblem:
    problem: InclusionProblem
    start: Vec
    solution: Vec
    gamma: float


def _l1quad() -> ToyProblem:
    # A = d|.|, B(x) = x - 1; the zero is 0
    B = LipschitzMap(lambda x: x - 1.0, 1.0, "shifted_identity")
    prob = InclusionProblem(ProxResolvent(abs_prox()), B, 1, "l1quad")
    return ToyProblem(prob, np.array([1.0]), np.array([0.0]), 0.3)


def _bilinear() -> ToyProblem:
    B = LipschitzMap.from_matrix(np.array([[0.0, 1.0], [-1.0, 0.0]]), "bilinear")
    prob = InclusionProblem(ResolventOperator.zero(), B, 2, "bilinear")
    return ToyProblem(prob, np.array([1.0, 1.0]), np.zeros(2), 0.3)


def _stationary() -> ToyProblem:
    prob = InclusionProblem(ResolventOperator.zero(), LipschitzMap.zero(), 1, "stationary")
    return ToyProblem(prob, np.array([0.5]), np.array([0.5]), 0.3)


TOYS: Dict[str, Callable[[], ToyProblem]] = {
    "l1quad": _l1quad,
    "bilinear": _bilinear,
    "stationary": _stationary,
}


def get_toy(name: str) -> ToyProblem:
    try:
        return TOYS[name]()
    except KeyError:
        raise ConfigError(f"Unknown toy '{name}'. Known toys: {', '.join(sorted(TOYS))}") from None


def run_toy(spec: ExperimentSpec) -> RunReport:
    toy = get_toy(spec.toy)
    stop = StopRule.parse(spec.stop) if spec.stop else StopRule(StopCriterion.STEP_NORM, 1e-12)
    if stop.criterion is not StopCriterion.STEP_NORM:
        raise ConfigError("toy runs support only step:<tol> stopping")
    config = SolverConfig.constant_gamma(
        toy.gamma, spec.max_iters, stop=stop,
        trace_every=spec.trace_every, record_timing=spec.record_timing,
    )
    report = validate_stepsize(config, toy.problem.beta or 1.0, 1.0, error_free=True)
    if not report.ok and not spec.allow_unsafe_stepsize:
        raise StepsizeError(report.message, report.bound, report.value)

    def distance(p: Vec) -> float:
        return float(np.linalg.norm(p - toy.solution))

    start = time.process_time()
    result = run(toy.problem, config, toy.start, extras={"distance": distance})
    cpu = time.process_time() - start

    path = write_trace(result.trace, Path(spec.output_dir) / f"toy_{spec.toy}_trace.csv")
    return RunReport(
        method="tseng-ep",
        iterations=result.iterations,
        stop_reason=result.stop_reason.value,
        final_fval=None,
        cpu_seconds=cpu,
        trace_path=str(path),
        criterion=spec.stop,
        distance=distance(result.solution),
        trace_rows=len(result.trace),
    )
