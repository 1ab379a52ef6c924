"""CLI entry point for rwrelab."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from rwrelab import __version__
from rwrelab.acceptance import SUITES, VerifyReport, verify
from rwrelab.config import apply_overrides, load_config
from rwrelab.errors import RwreError
from rwrelab.pipeline import Runner, load_manifest
from rwrelab.report import export_tables, write_yaml
from rwrelab.utils import setup_logging

app = typer.Typer(
    name="rwrelab",
    help="Random walks in random environments: simulation, correctors and limit-theorem checks",
    add_completion=False,
)
console = Console()


def version_callback(value: bool) -> None:
    if value:
        console.print(f"rwrelab {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    version: bool = typer.Option(
        False, "--version", "-V", callback=version_callback, is_eager=True,
        help="Show version and exit.",
    ),
) -> None:
    pass


def _fail(error: RwreError) -> typer.Exit:
    console.print(f"[red]Error:[/red] {escape(str(error))}")
    return typer.Exit(code=error.exit_code)


@app.command()
def run(
    config: Optional[Path] = typer.Option(
        None, "-c", "--config", exists=True, readable=True, help="YAML experiment config."
    ),
    workers: Optional[int] = typer.Option(None, "-w", "--workers", help="Worker processes (overrides config)."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed (overrides config)."),
    out: Optional[Path] = typer.Option(None, "-o", "--out", help="Output root (overrides config)."),
    resume: bool = typer.Option(
        True, "--resume/--restart", help="Reuse finished chunks of an earlier run, or discard them."
    ),
    verbose: bool = typer.Option(False, "-v", "--verbose", help="Verbose logging."),
) -> None:
    """Run one experiment and write its result files."""
    setup_logging(verbose=verbose)
    try:
        cfg = apply_overrides(load_config(config), workers, seed, out)
        runner = Runner(cfg)
        console.print(f"\n[bold]rwrelab v{__version__}[/bold]")
        console.print(f"  Experiment: {cfg.experiment}")
        console.print(f"  Model:      {cfg.spec.model.name} (d={cfg.spec.dim}, M={cfg.spec.range})")
        console.print(f"  Replicas:   {cfg.replicas} (workers {cfg.workers}, master seed {cfg.master_seed})")
        console.print(f"  Run dir:    {runner.run_dir}")
        console.print()
        manifest = runner.run(resume=resume, log_to_file=True, verbose=verbose)
    except RwreError as e:
        raise _fail(e) from e

    table = Table(title=f"rwrelab: {cfg.experiment}")
    table.add_column("Criterion", style="bold")
    table.add_column("Status")
    for name, ok in manifest.criteria.items():
        table.add_row(name, "[green]PASS[/green]" if ok else "[red]FAIL[/red]")
    if manifest.criteria:
        console.print(table)
    if manifest.status != "complete":
        console.print(f"[red]Run failed.[/red] See {runner.run_dir / 'result.yaml'}")
        raise typer.Exit(code=1)
    if not manifest.passed:
        console.print(f"[yellow]Criteria failed.[/yellow] Results in: {runner.run_dir}")
        raise typer.Exit(code=1)
    console.print(f"\n[green]Done![/green] Results in: {runner.run_dir}")


def _print_report(report: VerifyReport) -> None:
    table = Table(title=f"rwrelab verify: {report.suite}{' (quick)' if report.quick else ''}")
    table.add_column("#", justify="right")
    table.add_column("Criterion", style="bold")
    table.add_column("Statistic")
    table.add_column("Value", justify="right")
    table.add_column("Threshold")
    table.add_column("Status")
    for res in report.results:
        status = "[green]PASS[/green]" if res.passed else "[red]FAIL[/red]"
        label = f"{res.name} ({res.seconds:.1f}s)"
        if res.error:
            table.add_row(str(res.number), label, res.error, "", "", status)
        for i, check in enumerate(res.checks):
            mark = "[green]ok[/green]" if check.passed else "[red]x[/red]"
            table.add_row(
                str(res.number) if i == 0 else "", label if i == 0 else "",
                check.statistic, check.value, check.threshold, f"{status} {mark}" if i == 0 else mark,
            )
    console.print()
    console.print(table)
    console.print()


@app.command("verify")
def verify_cmd(
    suite: str = typer.Argument("oracles", help=f"Acceptance suite: {', '.join(SUITES)}."),
    out: Path = typer.Option(Path("results"), "-o", "--out", help="Output root for acceptance runs."),
    workers: int = typer.Option(1, "-w", "--workers", help="Worker processes for harness-backed criteria."),
    quick: bool = typer.Option(False, "--quick", help="Reduced sizes for a smoke run."),
    verbose: bool = typer.Option(False, "-v", "--verbose", help="Verbose logging."),
) -> None:
    """Run an acceptance suite and print per-criterion status."""
    setup_logging(log_file=out / "verify" / "logs" / "rwrelab.log", verbose=verbose)
    try:
        report = verify(suite, out, quick=quick, workers=workers)
    except RwreError as e:
        raise _fail(e) from e
    write_yaml(out / "verify" / f"{suite}{'-quick' if quick else ''}.yaml", report.to_dict())
    _print_report(report)
    if not report.passed:
        raise typer.Exit(code=1)
    console.print("[green]All criteria passed.[/green]")


@app.command()
def inspect(
    run_dir: Path = typer.Argument(..., exists=True, help="Run directory or manifest.yaml."),
) -> None:
    """Pretty-print a run manifest."""
    try:
        manifest = load_manifest(run_dir)
    except RwreError as e:
        raise _fail(e) from e

    table = Table(title=f"rwrelab: {manifest.experiment} run")
    table.add_column("Field", style="bold")
    table.add_column("Value")
    status_style = {"complete": "green", "failed": "red"}.get(manifest.status, "yellow")
    table.add_row("Status", f"[{status_style}]{manifest.status}[/{status_style}]")
    table.add_row("Config hash", manifest.config_hash)
    table.add_row("Version", manifest.version)
    table.add_row("Replicas", str(manifest.replicas))
    table.add_row("Chunks", f"{manifest.chunks_done}/{manifest.chunks_total}")
    table.add_row("Seed rule", manifest.seed_rule)
    if manifest.passed is not None:
        table.add_row("Passed", "[green]yes[/green]" if manifest.passed else "[red]no[/red]")
    for name, ok in manifest.criteria.items():
        table.add_row(f"  {name}", "[green]PASS[/green]" if ok else "[red]FAIL[/red]")
    for name, digest in manifest.digests.items():
        table.add_row(name, digest[:16])
    if "seconds" in manifest.timing:
        table.add_row("Wall time", f"{manifest.timing['seconds']:.1f}s")
    console.print()
    console.print(table)
    console.print()


@app.command()
def export(
    run_dir: Path = typer.Argument(..., exists=True, help="Run directory."),
    dest: Path = typer.Option(Path("export"), "-o", "--out", help="Destination directory."),
    fmt: str = typer.Option("csv", "--format", help="csv or tsv."),
) -> None:
    """Copy the flat tables of a run as CSV or TSV."""
    try:
        written = export_tables(run_dir, dest, fmt)
    except RwreError as e:
        raise _fail(e) from e
    for path in written:
        console.print(f"  {path}")
    console.print(f"[green]Exported {len(written)} table(s)[/green] to {dest}")
