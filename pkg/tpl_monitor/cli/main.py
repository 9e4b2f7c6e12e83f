"""Command line interface for TPL Monitor."""

import logging
import sys
from functools import wraps
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click
from rich import print as rprint
from rich.console import Console
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from ..config.run_config import ConfigManager, RunConfig
from ..config.settings import settings
from ..core.errors import MonitorError, UsageError
from ..core.models import AccuracyTable, CellSummary, DesignSpec, ProcessParams
from ..core.pipeline import EVALUATION_PARTS, METHODS, MonitoringPipeline
from ..utils.helpers import design_label, format_float, format_rate, group_label
from ..utils.validators import validate_probability

console = Console()
logger = logging.getLogger(__name__)


def _handle_errors(func):
    """Map library exceptions onto exit codes and a one-line message."""

    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except MonitorError as e:
            logger.error(f"{type(e).__name__}: {e}")
            rprint(f"[bold red]Error:[/bold red] {e}")
            sys.exit(e.exit_code)
        except KeyboardInterrupt:
            rprint("\n[yellow]Operation cancelled by user[/yellow]")
            sys.exit(1)
        except click.exceptions.Exit:
            raise
        except Exception as e:
            logger.exception(f"Unexpected error: {e}")
            rprint(f"[bold red]Error:[/bold red] {e}")
            sys.exit(1)

    return wrapper


def _build_config(ctx, **overrides) -> RunConfig:
    """File values under CLI flags; a missing default file means built-in defaults."""
    settings.validate()
    config_path = ctx.obj.get("config_path")
    if config_path is None and Path(settings.config_path).is_file():
        config_path = settings.config_path
    flags: Dict[str, Any] = {"workers": ctx.obj.get("workers")}
    flags.update(overrides)
    config = ConfigManager(config_path).build(flags)
    if config_path:
        logger.info(f"Loaded configuration from {config_path}")
    return config


def _output_dir(config: RunConfig, command: str) -> Path:
    if config.paths.out:
        return Path(config.paths.out)
    return Path(settings.output_dir) / command


def _run_with_spinner(description: str, func, *args, **kwargs):
    with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), console=console) as progress:
        task = progress.add_task(description, total=None)
        result = func(*args, **kwargs)
        progress.update(task, description="Done!")
    return result


@click.group()
@click.option("--config", "-c", "config_path", type=click.Path(dir_okay=False),
              help="Run configuration YAML (default: $TPL_MONITOR_CONFIG or ./config.yaml when present)")
@click.option("--workers", type=int, default=None, help="Thread pool size for Monte Carlo loops")
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging")
@click.pass_context
def cli(ctx, config_path: Optional[str], workers: Optional[int], verbose: bool):
    """TPL Monitor - statistical machine-health monitoring for two-photon lithography."""

    # Set up logging
    log_level = logging.DEBUG if verbose else getattr(logging, settings.log_level, logging.INFO)
    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    # Store context
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["workers"] = workers if workers is not None or not settings.workers_from_env else settings.workers
    ctx.obj["verbose"] = verbose


@cli.command()
@click.option("--seed", type=int, help="Root seed for every random stream")
@click.option("--out", "-o", type=click.Path(file_okay=False), help="Output directory")
@click.pass_context
@_handle_errors
def simulate(ctx, seed: Optional[int], out: Optional[str]):
    """Generate status-1 and status-2 synthetic datasets with their profile manifest."""
    config = _build_config(ctx, seed=seed, **{"paths.out": out})
    pipeline = MonitoringPipeline(config)
    results = _run_with_spinner("Simulating status grids...", pipeline.simulate, _output_dir(config, "simulate"))

    records = results["records"]
    summary_text = f"""[bold]Seed:[/bold] {config.seed}
[bold]Preset:[/bold] {config.simulation.preset}
[bold]Status 1 records:[/bold] {records['status1']}
[bold]Status 2 records:[/bold] {records['status2']}
[bold]Output Directory:[/bold] {results['output_directory']}"""
    console.print(Panel(summary_text, title="Simulation", expand=False))
    _print_saved_files(results)


@cli.command()
@click.argument("dataset", required=False, type=click.Path(dir_okay=False))
@click.option("--reference", "-r", type=click.Path(dir_okay=False), help="Dataset to fit (alias of DATASET)")
@click.option("--out", "-o", type=click.Path(file_okay=False), help="Output directory")
@click.pass_context
@_handle_errors
def fit(ctx, dataset: Optional[str], reference: Optional[str], out: Optional[str]):
    """Fit radius and height models per design, plus the coefficient trend."""
    config = _build_config(ctx, **{"paths.reference": reference or dataset, "paths.out": out})
    source = config.paths.reference
    if not source:
        raise UsageError("fit needs a dataset: pass DATASET, --reference or set paths.reference")

    pipeline = MonitoringPipeline(config)
    results = _run_with_spinner("Fitting dimension models...", pipeline.fit, source, _output_dir(config, "fit"))

    table = Table(title="Fitted coefficients")
    table.add_column("Design", style="cyan")
    for name in ("a_R", "b_R", "c_R", "a_H", "b_H", "c_H"):
        table.add_column(name, justify="right")
    table.add_column("Groups", justify="right")
    for design_fit in results["models"].fits:
        coefficients = design_fit.coefficients()
        table.add_row(
            design_label(design_fit.design),
            *(format_float(coefficients[n]) for n in ("a_R", "b_R", "c_R", "a_H", "b_H", "c_H")),
            str(len(design_fit.training_cells)),
        )
    console.print(table)
    if results["trend"] is None:
        rprint("[yellow]Only one design fitted; no trend written[/yellow]")
    _print_saved_files(results)


@cli.command()
@click.option("--method", "-m", type=click.Choice(METHODS), required=True, help="Monitoring method")
@click.option("--reference", "-r", type=click.Path(dir_okay=False), help="Reference-status dataset")
@click.option("--query", "-q", type=click.Path(dir_okay=False), help="Dataset under test")
@click.option("--alpha", type=float, help="Significance level")
@click.option("--seed", type=int, help="Root seed for bootstrap streams")
@click.option("--feature", type=click.Choice(["radius", "height", "both"]), default="both",
              help="Feature tested by m2-z")
@click.option("--models", type=click.Path(dir_okay=False), help="models.json from fit; m2-z/m2-t2 predict from it")
@click.option("--out", "-o", type=click.Path(file_okay=False), help="Output directory")
@click.pass_context
@_handle_errors
def monitor(ctx, method: str, reference: Optional[str], query: Optional[str], alpha: Optional[float],
            seed: Optional[int], feature: str, models: Optional[str], out: Optional[str]):
    """Decide, cell by cell, whether the query data show a changed machine status."""
    if alpha is not None:
        validate_probability(alpha, "alpha")
    config = _build_config(
        ctx, seed=seed, **{"tests.alpha": alpha, "paths.reference": reference, "paths.query": query, "paths.out": out}
    )
    required = ("query",) if models else ("reference", "query")
    missing = [name for name in required if not getattr(config.paths, name)]
    if missing:
        raise UsageError(f"monitor needs {' and '.join('--' + m for m in missing)} (or paths.{missing[0]} in the config)")

    pipeline = MonitoringPipeline(config)
    results = _run_with_spinner(
        f"Running {method}...",
        pipeline.monitor,
        method,
        config.paths.reference,
        config.paths.query,
        _output_dir(config, "monitor"),
        feature,
        models,
    )

    report = results["report"]
    changed = sum(v.changed for v in report.verdicts)
    summary_text = f"""[bold]Method:[/bold] {method}
[bold]Alpha:[/bold] {config.tests.alpha}
[bold]Baseline:[/bold] {models or "reference dataset"}
[bold]Verdicts:[/bold] {len(report.verdicts)}
[bold]Changed:[/bold] {changed}
[bold]Skipped:[/bold] {len(report.skipped)}"""
    console.print(Panel(summary_text, title="Monitoring", expand=False))
    if results["grid"]:
        _print_verdict_grid(results["grid"], f"{method} verdicts")
    _print_accuracy_table(report.table)
    for cell, reason in report.skipped.items():
        rprint(f"[yellow]Skipped {cell}:[/yellow] {reason}")
    _print_saved_files(results)


@cli.command()
@click.option("--part", "parts", multiple=True, type=click.Choice(EVALUATION_PARTS),
              help="Evaluation part to run (repeatable; default all)")
@click.option("--alpha", type=float, help="Significance level")
@click.option("--seed", type=int, help="Root seed for every random stream")
@click.option("--repetitions", type=int, help="Monte Carlo repetitions per sweep point")
@click.option("--out", "-o", type=click.Path(file_okay=False), help="Output directory")
@click.pass_context
@_handle_errors
def evaluate(ctx, parts: Sequence[str], alpha: Optional[float], seed: Optional[int],
             repetitions: Optional[int], out: Optional[str]):
    """Accuracy tables, error-rate sweeps and null calibration on the synthetic status pair."""
    if alpha is not None:
        validate_probability(alpha, "alpha")
    config = _build_config(
        ctx, seed=seed, **{"tests.alpha": alpha, "monte_carlo.repetitions": repetitions, "paths.out": out}
    )
    pipeline = MonitoringPipeline(config)
    results = _run_with_spinner(
        "Evaluating monitoring methods...", pipeline.evaluate, _output_dir(config, "evaluate"), list(parts) or None
    )

    if "calibration" in results:
        table = Table(title="Null calibration (Type I rate)")
        table.add_column("Test", style="cyan")
        table.add_column("alpha", justify="right")
        table.add_column("n", justify="right")
        table.add_column("Rate", justify="right")
        table.add_column("OK", justify="center")
        for row in results["calibration"]:
            table.add_row(
                row.test, f"{row.alpha:g}", str(row.sample_size), f"{row.rate:.4f}",
                "[green]yes[/green]" if row.within_tolerance else "[red]no[/red]",
            )
        console.print(table)
    if "m1_grid" in results:
        for feature, grid in results["m1_grid"].items():
            _print_verdict_grid(grid, f"Two-sample t-test, {feature}, different status")
    if "m2" in results:
        m2 = results["m2"]
        for feature, count in m2.z_miss_t2_detect.items():
            rprint(f"[bold]{feature} Z-test accepts but T^2 rejects:[/bold] {count} cell(s)")
    for table in results["tables"]:
        _print_accuracy_table(table)
    _print_saved_files(results)


@cli.command()
@click.argument("dataset", required=False, type=click.Path(dir_okay=False))
@click.option("--reference", "-r", type=click.Path(dir_okay=False), help="Dataset to summarize (alias of DATASET)")
@click.option("--out", "-o", type=click.Path(file_okay=False), help="Output directory")
@click.pass_context
@_handle_errors
def report(ctx, dataset: Optional[str], reference: Optional[str], out: Optional[str]):
    """Per-cell counts and mean/SD of radius and height."""
    config = _build_config(ctx, **{"paths.reference": reference or dataset, "paths.out": out})
    if not config.paths.reference:
        raise UsageError("report needs a dataset: pass DATASET, --reference or set paths.reference")

    pipeline = MonitoringPipeline(config)
    results = pipeline.report(config.paths.reference, _output_dir(config, "report"))
    _print_summary(results["summary"])
    _print_saved_files(results)


def _print_summary(summaries: List[CellSummary]):
    table = Table(title="Grid summary")
    table.add_column("Design", style="cyan")
    table.add_column("Group", style="green")
    table.add_column("n", justify="right")
    table.add_column("R mean", justify="right")
    table.add_column("R SD", justify="right")
    table.add_column("H mean", justify="right")
    table.add_column("H SD", justify="right")
    for s in summaries:
        table.add_row(
            design_label(DesignSpec(design_dimension=s.design_dimension)),
            group_label(ProcessParams(laser_power=s.laser_power, scan_rate=s.scan_rate)),
            str(s.count),
            format_float(s.radius_mean),
            format_float(s.radius_sd),
            format_float(s.height_mean),
            format_float(s.height_sd),
        )
    console.print(table)


def _print_verdict_grid(grid: Dict[str, Dict[str, str]], title: str):
    """Designs as rows, parameter groups as columns."""
    columns: List[str] = []
    for row in grid.values():
        for group in row:
            if group not in columns:
                columns.append(group)
    table = Table(title=title)
    table.add_column("", style="cyan")
    for group in columns:
        table.add_column(group, justify="center")
    for design, row in grid.items():
        cells = []
        for group in columns:
            value = row.get(group)
            if value is None:
                cells.append("[dim]-[/dim]")
            else:
                cells.append("[red]reject[/red]" if value == "reject" else "[green]accept[/green]")
        table.add_row(design, *cells)
    console.print(table)


def _print_accuracy_table(accuracy: AccuracyTable):
    table = Table(title=accuracy.title)
    table.add_column("Scenario", style="cyan")
    table.add_column("# Rejections", justify="right")
    table.add_column("# Non-Rejections", justify="right")
    table.add_column("Accuracy (%)", justify="right")
    for row in accuracy.rows:
        table.add_row(row.scenario, str(row.rejections), str(row.acceptances), format_rate(row.accuracy))
    console.print(table)


def _print_saved_files(results: Dict[str, Any]):
    rprint("[green]Files created:[/green]")
    for file_path in results["saved_files"]:
        rprint(f"  • {Path(file_path).name}")
    rprint(f"[dim]Output directory: {results['output_directory']}[/dim]")


if __name__ == '__main__':
    cli(obj={})
