"""Command-line interface for fbf-lab."""

from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import typer
from rich.panel import Panel
from rich.table import Table

from ..config import Config, RunMode
from ..core.errors import SplittingError
from ..core.models import ExperimentSpec, RunReport
from ..core.reference_store import ReferenceStore
from ..services import experiment_service
from ..utils.file_handler import FileHandler
from ..utils.logging_setup import configure_logging, console

app = typer.Typer(
    name="fbf-lab",
    help="Forward-backward-forward splitting experiments: TV deblurring, benchmarks, toy problems",
    no_args_is_help=True,
)

# Options shared by the experiment commands
CONFIG = typer.Option(None, "--config", help="Flat YAML config file; flags override its values")
IMAGE = typer.Option(None, "--image", help="PGM path or synthetic:<N>")
LAMBDA = typer.Option(None, "--lambda", help="Regularization weight (default 0.003)")
GAMMA_RULE = typer.Option(None, "--gamma-rule", help="error-free | with-error")
TAU = typer.Option(None, "--tau", help="Primal metric rule: const:<v>, one-minus-inv-k, ...")
SIGMA1 = typer.Option(None, "--sigma1", help="Metric rule of the blur dual")
SIGMA2 = typer.Option(None, "--sigma2", help="Metric rule of the TV dual")
ERRORS = typer.Option(None, "--errors", help="none | inv-k2 | inv-k5 | inv-kk | half-k")
STOP = typer.Option(None, "--stop", help="step|fval|dist:<tol>")
MAX_ITERS = typer.Option(None, "--max-iters", help="Iteration budget")
SEED = typer.Option(None, "--seed", help="Noise seed (required when noise_sigma > 0)")
OUT = typer.Option(None, "--out", help="Output directory")
TRACE_EVERY = typer.Option(None, "--trace-every", help="Trace stride")
PROX_RULE = typer.Option(None, "--prox-rule", help="exact | scaled")
NOISE_SIGMA = typer.Option(None, "--noise-sigma", help="Noise standard deviation (default 1e-3)")
KERNEL_SIZE = typer.Option(None, "--kernel-size", help="Odd blur kernel size (default 9)")
REFERENCE_ITERS = typer.Option(None, "--reference-iters", help="Iterations for the reference x**")
TIMING = typer.Option(None, "--timing/--no-timing", help="Record elapsed seconds in traces")
UNSAFE = typer.Option(False, "--allow-unsafe-stepsize", help="Run even if the stepsize bound fails")
NONSUMMABLE = typer.Option(False, "--allow-nonsummable-errors", help="Accept error schedules without certificate")
CACHE_DIR = typer.Option(None, "--cache-dir", help="Reference cache directory")
REFERENCE = typer.Option(None, "--reference", help="Reference solution (.npy) for fval/dist stopping; skips the cache")


@app.callback()
def _setup(
    log_level: str = typer.Option(Config.LOG_LEVEL, "--log-level", help="Logging level"),
):
    configure_logging(log_level)


def _build_spec(mode: RunMode, config: Optional[Path], **flags: Any) -> ExperimentSpec:
    data: Dict[str, Any] = {}
    if config is not None:
        if not config.exists():
            raise typer.BadParameter(f"Config file not found: {config}")
        data.update(FileHandler.load_yaml(config))
    for key, value in flags.items():
        if value is None:
            continue
        data[key] = str(value) if isinstance(value, Path) else value
    return ExperimentSpec.from_flat(data, mode)


def _store(cache_dir: Optional[Path]) -> ReferenceStore:
    return ReferenceStore(cache_dir or Config.CACHE_DIR)


def _list_references(store: ReferenceStore) -> None:
    """Table on stderr, one key per line on stdout."""
    entries = store.list_entries()
    table = Table(title=f"Cached references in {store.base_dir}")
    for column in ("key", "image", "dim", "iterations", "fval"):
        table.add_column(column)
    for e in entries:
        table.add_row(e["key"][:12], e["image"], str(e["dim"]), str(e["iterations"]), f"{e['fval']:.10g}")
    console.print(table)
    for e in entries:
        typer.echo(e["key"])


def _emit(report: RunReport) -> None:
    """The one-line JSON report goes to stdout unformatted."""
    typer.echo(report.to_json_line())


def _fail(exc: Union[Exception, str]) -> None:
    console.print(f"[red]Error: {exc}[/red]")
    raise typer.Exit(1)


@app.command()
def deblur(
    config: Optional[Path] = CONFIG,
    image: Optional[str] = IMAGE,
    lam: Optional[float] = LAMBDA,
    gamma_rule: Optional[str] = GAMMA_RULE,
    tau: Optional[str] = TAU,
    sigma1: Optional[str] = SIGMA1,
    sigma2: Optional[str] = SIGMA2,
    errors: Optional[str] = ERRORS,
    stop: Optional[str] = STOP,
    max_iters: Optional[int] = MAX_ITERS,
    seed: Optional[int] = SEED,
    out: Optional[Path] = OUT,
    trace_every: Optional[int] = TRACE_EVERY,
    prox_rule: Optional[str] = PROX_RULE,
    noise_sigma: Optional[float] = NOISE_SIGMA,
    kernel_size: Optional[int] = KERNEL_SIZE,
    reference: Optional[Path] = REFERENCE,
    reference_iters: Optional[int] = REFERENCE_ITERS,
    timing: Optional[bool] = TIMING,
    allow_unsafe_stepsize: bool = UNSAFE,
    allow_nonsummable_errors: bool = NONSUMMABLE,
    cache_dir: Optional[Path] = CACHE_DIR,
):
    """Deblur an image with the block primal-dual Tseng-EP iteration."""
    try:
        spec = _build_spec(
            RunMode.DEBLUR, config, image=image, gamma_rule=gamma_rule, tau=tau,
            sigma1=sigma1, sigma2=sigma2, errors=errors, stop=stop, max_iters=max_iters,
            seed=seed, out=out, trace_every=trace_every, prox_rule=prox_rule,
            noise_sigma=noise_sigma, kernel_size=kernel_size, reference=reference,
            reference_iters=reference_iters, timing=timing,
            allow_unsafe_stepsize=allow_unsafe_stepsize or None,
            allow_nonsummable_errors=allow_nonsummable_errors or None, **{"lambda": lam},
        )
        console.print("[cyan]Running deblurring...[/cyan]")
        report = experiment_service.run_deblur(spec, _store(cache_dir))
    except SplittingError as exc:
        _fail(exc)

    console.print(Panel(
        f"[green]Deblurring finished![/green]\n\n"
        f"Iterations: {report.iterations} ({report.stop_reason})\n"
        f"ISNR: {report.final_isnr:.4f} dB\n"
        f"Objective: {report.final_fval:.6g}\n"
        f"Trace: {report.trace_path}\n"
        f"Image: {report.output_image_path}",
        title="Deblur Complete"
    ))
    _emit(report)


@app.command()
def bench(
    config: Optional[Path] = CONFIG,
    criteria: str = typer.Option("step:1e-2", "--criteria", help="Comma-separated stop rules to compare under"),
    image: Optional[str] = IMAGE,
    lam: Optional[float] = LAMBDA,
    gamma_rule: Optional[str] = GAMMA_RULE,
    tau: Optional[str] = TAU,
    sigma1: Optional[str] = SIGMA1,
    sigma2: Optional[str] = SIGMA2,
    errors: Optional[str] = ERRORS,
    max_iters: Optional[int] = MAX_ITERS,
    seed: Optional[int] = SEED,
    out: Optional[Path] = OUT,
    trace_every: Optional[int] = TRACE_EVERY,
    prox_rule: Optional[str] = PROX_RULE,
    noise_sigma: Optional[float] = NOISE_SIGMA,
    kernel_size: Optional[int] = KERNEL_SIZE,
    reference: Optional[Path] = REFERENCE,
    reference_iters: Optional[int] = REFERENCE_ITERS,
    timing: Optional[bool] = TIMING,
    allow_unsafe_stepsize: bool = UNSAFE,
    allow_nonsummable_errors: bool = NONSUMMABLE,
    cache_dir: Optional[Path] = CACHE_DIR,
):
    """Compare classical Tseng with Tseng-EP under each stopping criterion."""
    try:
        spec = _build_spec(
            RunMode.BENCH, config, criteria=criteria, image=image, gamma_rule=gamma_rule,
            tau=tau, sigma1=sigma1, sigma2=sigma2, errors=errors, max_iters=max_iters,
            seed=seed, out=out, trace_every=trace_every, prox_rule=prox_rule,
            noise_sigma=noise_sigma, kernel_size=kernel_size, reference=reference,
            reference_iters=reference_iters, timing=timing,
            allow_unsafe_stepsize=allow_unsafe_stepsize or None,
            allow_nonsummable_errors=allow_nonsummable_errors or None, **{"lambda": lam},
        )
        reports: List[RunReport] = experiment_service.run_bench(spec, _store(cache_dir))
    except SplittingError as exc:
        _fail(exc)

    table = Table(title="Tseng vs Tseng-EP")
    for column in ("criterion", "method", "iterations", "ISNR", "fval", "B calls", "B calls/iter", "cpu s"):
        table.add_column(column)
    for r in reports:
        per_iter = r.b_evaluations_per_iteration
        table.add_row(
            r.criterion or "-", r.method, str(r.iterations), f"{r.final_isnr:.4f}",
            f"{r.final_fval:.6g}", str(r.b_evaluations),
            f"{per_iter:.3f}" if per_iter is not None else "-", f"{r.cpu_seconds:.2f}",
        )
    console.print(table)
    for r in reports:
        _emit(r)


@app.command()
def reference(
    config: Optional[Path] = CONFIG,
    image: Optional[str] = IMAGE,
    lam: Optional[float] = LAMBDA,
    gamma_rule: Optional[str] = GAMMA_RULE,
    tau: Optional[str] = TAU,
    sigma1: Optional[str] = SIGMA1,
    sigma2: Optional[str] = SIGMA2,
    errors: Optional[str] = ERRORS,
    seed: Optional[int] = SEED,
    prox_rule: Optional[str] = PROX_RULE,
    noise_sigma: Optional[float] = NOISE_SIGMA,
    kernel_size: Optional[int] = KERNEL_SIZE,
    reference_iters: Optional[int] = REFERENCE_ITERS,
    allow_unsafe_stepsize: bool = UNSAFE,
    allow_nonsummable_errors: bool = NONSUMMABLE,
    cache_dir: Optional[Path] = CACHE_DIR,
    list_cached: bool = typer.Option(False, "--list", help="List cached reference solutions and exit"),
    delete: Optional[str] = typer.Option(None, "--delete", help="Remove the cached entry with this key and exit"),
):
    """Compute (or fetch from cache) the reference solution x**."""
    store = _store(cache_dir)
    if list_cached:
        _list_references(store)
        return
    if delete is not None:
        try:
            removed = store.delete(delete)
        except ValueError as exc:
            _fail(exc)
        if not removed:
            _fail(f"No cached reference with key {delete}")
        console.print(f"[green]Removed {delete}[/green]")
        return

    try:
        spec = _build_spec(
            RunMode.REFERENCE, config, image=image, gamma_rule=gamma_rule, tau=tau,
            sigma1=sigma1, sigma2=sigma2, errors=errors, seed=seed, prox_rule=prox_rule,
            noise_sigma=noise_sigma, kernel_size=kernel_size, reference_iters=reference_iters,
            allow_unsafe_stepsize=allow_unsafe_stepsize or None,
            allow_nonsummable_errors=allow_nonsummable_errors or None, **{"lambda": lam},
        )
        entry = experiment_service.compute_reference(spec, store)
    except SplittingError as exc:
        _fail(exc)

    console.print(Panel(
        f"[green]Reference ready[/green]\n\n"
        f"Key: {entry.key}\n"
        f"fval: {entry.fval:.10g}\n"
        f"Iterations: {entry.meta.get('iterations')}",
        title="Reference Solution"
    ))
    typer.echo(str(entry.path))


@app.command()
def toy(
    name: str = typer.Argument("l1quad", help="l1quad | bilinear | stationary"),
    stop: Optional[str] = STOP,
    max_iters: Optional[int] = MAX_ITERS,
    out: Optional[Path] = OUT,
    trace_every: Optional[int] = TRACE_EVERY,
    timing: Optional[bool] = TIMING,
):
    """Run a small inclusion with a known zero and report the distance to it."""
    try:
        spec = _build_spec(
            RunMode.TOY, None, toy=name, stop=stop, max_iters=max_iters, out=out,
            trace_every=trace_every, timing=timing,
        )
        report = experiment_service.run_toy(spec)
    except SplittingError as exc:
        _fail(exc)

    console.print(Panel(
        f"[green]{name}[/green]: {report.iterations} iterations ({report.stop_reason}), "
        f"distance to solution {report.distance:.3e}",
        title="Toy Problem"
    ))
    _emit(report)


def main():
    """Entry point."""
    app()


if __name__ == "__main__":
    main()
