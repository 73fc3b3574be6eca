"""CLI interface for the TASS toolkit using Typer."""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Annotated, NoReturn

import typer
from rich import print as rprint
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from tass import __version__
from tass.errors import GradCheckFailedError, TassError
from tass.models import EvalReport

LOG_LEVEL_DEFAULT = os.getenv("TASS_LOG_LEVEL", "INFO")

app = typer.Typer(
    name="tass",
    help="🎧 TASS: target-aware spatial and joint temporal grounding for audio-visual QA",
    add_completion=False,
    rich_markup_mode="rich",
)
console = Console()
err_console = Console(stderr=True)

SeedOption = Annotated[int | None, typer.Option("--seed", "-s", help="Seed overriding the config's seed")]


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, rich_tracebacks=True, show_path=False)],
        force=True,
    )


def _fail(action: str, e: Exception) -> NoReturn:
    """Red message for humans, one JSON line on stderr for machines, exit 1."""
    code = e.code if isinstance(e, TassError) else "unexpected_error"
    if not isinstance(e, TassError):
        logging.getLogger(__name__).exception("unexpected failure while %s", action)
    rprint(f"[red]❌ Error {action}: {e}[/red]")
    typer.echo(json.dumps({"error": code, "message": str(e)}), err=True)
    raise typer.Exit(1) from e


@app.callback()
def main_callback(
    log_level: Annotated[str, typer.Option("--log-level", "-l", help="Logging level")] = LOG_LEVEL_DEFAULT,
) -> None:
    configure_logging(log_level)


@app.command("gen-data")
def gen_data_command(
    out: Annotated[Path, typer.Option("--out", "-o", help="Output directory for train/ and val/")],
    spec: Annotated[Path | None, typer.Option("--spec", help="Scenario JSON (defaults when omitted)")] = None,
    seed: SeedOption = None,
) -> None:
    """
    🧪 Generate a synthetic planted-answer dataset.

    Writes feature files, manifests and latent scene scripts for a train and
    a validation split.
    """
    try:
        from tass.commands import gen_data_impl

        manifests = gen_data_impl(spec, out, seed=seed)
        lines = ["[bold green]🧪 Synthetic dataset written[/bold green]\n", f"[cyan]Location:[/cyan] {out}"]
        for split, manifest in manifests.items():
            dims = manifest.dims
            lines.append(
                f"[cyan]{split}:[/cyan] {len(manifest)} samples, {len(manifest.document.videos)} videos "
                f"(T={dims.t}, {dims.h}×{dims.w}, d={dims.d})"
            )
        if manifests:
            lines.append(f"[cyan]Answers:[/cyan] {len(next(iter(manifests.values())).answers)}")
        rprint(Panel.fit("\n".join(lines), title="gen-data", border_style="green"))
    except Exception as e:
        _fail("generating data", e)


@app.command("preprocess")
def preprocess_command(
    in_dir: Annotated[Path, typer.Option("--in", "-i", help="Dataset directory (or a root holding splits)")],
    t2: Annotated[int, typer.Option("--t2", help="Pooling window in segments")],
    out: Annotated[Path, typer.Option("--out", "-o", help="Output directory")],
) -> None:
    """⏱️ Temporal average pooling of every feature sequence."""
    try:
        from tass.commands import preprocess_impl

        results = preprocess_impl(in_dir, t2, out)
        for name, manifest in results.items():
            rprint(f"[green]✅ {name}: {len(manifest)} samples pooled to T={manifest.dims.t}[/green]")
    except Exception as e:
        _fail("preprocessing", e)


@app.command("train")
def train_command(
    config: Annotated[Path, typer.Option("--config", "-c", help="Training config JSON")],
    out: Annotated[Path, typer.Option("--out", "-o", help="Run directory for checkpoints and history")],
    seed: SeedOption = None,
) -> None:
    """
    🏋️ Train the model.

    Checkpoints every epoch under OUT/checkpoints and keeps OUT/history.json
    current.
    """
    try:
        from tass.commands import train_impl

        result = train_impl(config, out, seed=seed)
        table = Table(title="Training history")
        for column in ("epoch", "lr", "loss", "L_qa", "L_cms", "L_s", "val acc"):
            table.add_column(column, justify="right")
        for r in result.history:
            table.add_row(
                str(r.epoch),
                f"{r.lr:.2g}",
                f"{r.train_loss:.4f}",
                f"{r.train_loss_qa:.4f}",
                f"{r.train_loss_cms:.4f}",
                f"{r.train_loss_match:.4f}",
                f"{r.val.overall_accuracy:.3f}" if r.val else "—",
            )
        console.print(table)
        rprint(f"[green]✅ {result.model.n_parameters} trainable parameters; run saved to {out}[/green]")
    except Exception as e:
        _fail("training", e)


def _report_panel(report: EvalReport, title: str) -> Panel:
    body = (
        f"[bold green]Overall accuracy: {report.overall_accuracy:.4f}[/bold green] "
        f"({report.n_samples} samples)\n\n"
    )
    for qtype, acc in sorted(report.per_type_accuracy.items()):
        body += f"  • [cyan]{qtype}:[/cyan] {acc:.4f} (n={report.per_type_count[qtype]})\n"
    body += (
        f"\n[cyan]Losses:[/cyan] total {report.loss_total:.4f}, qa {report.loss_qa:.4f}, "
        f"cms {report.loss_cms:.4f}, match {report.loss_match:.4f}\n"
    )
    if report.diagnostic_js is not None:
        body += f"[cyan]Diagnostic question-aware JS:[/cyan] {report.diagnostic_js:.4f}\n"
    body += f"[cyan]Trainable parameters:[/cyan] {report.trainable_parameters}\n[dim]{report.wall_time_s:.2f}s[/dim]"
    return Panel.fit(body, title=title, border_style="blue")


@app.command("eval")
def eval_command(
    checkpoint: Annotated[Path, typer.Option("--checkpoint", "-k", help="Checkpoint or run directory")],
    data: Annotated[Path, typer.Option("--data", "-d", help="Dataset directory")],
    dump_attention: Annotated[
        Path | None, typer.Option("--dump-attention", help="Directory for per-sample attention maps")
    ] = None,
    seed: Annotated[int | None, typer.Option("--seed", "-s", help="Seed for the evaluation match pairs")] = None,
    as_json: Annotated[bool, typer.Option("--json", help="Print the report as JSON")] = False,
) -> None:
    """📊 Evaluate a checkpoint on a dataset."""
    try:
        from tass.commands import eval_impl

        report = eval_impl(checkpoint, data, dump_dir=dump_attention, seed=seed)
        if as_json:
            typer.echo(report.model_dump_json(indent=2))
        else:
            rprint(_report_panel(report, "Evaluation"))
    except Exception as e:
        _fail("evaluating", e)


@app.command("gradcheck")
def gradcheck_command(
    tol: Annotated[float, typer.Option("--tol", help="Relative error tolerance")] = 1e-5,
    seed: Annotated[int, typer.Option("--seed", "-s", help="First seed")] = 0,
    n_seeds: Annotated[int, typer.Option("--n-seeds", help="Number of seeds")] = 10,
    probe: Annotated[list[str] | None, typer.Option("--probe", "-p", help="Probe to run (repeatable)")] = None,
) -> None:
    """🔬 Compare backward against central finite differences."""
    try:
        from tass.commands import gradcheck_impl

        summary = gradcheck_impl(tol, seed, n_seeds, probe)
        worst = summary.worst
        if not summary.passed:
            table = Table(title="Failed gradient checks")
            for column in ("tensor", "max rel err", "max abs err", "failed/checked"):
                table.add_column(column)
            for r in summary.failures:
                table.add_row(r.label, f"{r.max_rel_err:.3g}", f"{r.max_abs_err:.3g}", f"{r.n_failed}/{r.n_checked}")
            console.print(table)
            raise GradCheckFailedError(f"{len(summary.failures)} of {len(summary.reports)} checks exceeded tol {tol}")
        rprint(
            f"[green]✅ {len(summary.reports)} gradient checks passed over {len(summary.seeds)} seeds "
            f"in {summary.elapsed_s:.1f}s (worst rel err {worst.max_rel_err if worst else 0.0:.3g})[/green]"
        )
    except Exception as e:
        _fail("checking gradients", e)


@app.command("ablate")
def ablate_command(
    config: Annotated[Path, typer.Option("--config", "-c", help="Base training config JSON")],
    axes: Annotated[str, typer.Option("--axes", help="Comma-separated axes, e.g. target_aware,cms,order")] = "",
    out: Annotated[Path, typer.Option("--out", "-o", help="Output directory")] = Path("ablation"),
    seeds: Annotated[int, typer.Option("--seeds", help="Seeds per variant")] = 5,
    seed: SeedOption = None,
) -> None:
    """🧩 Train every ablation variant and write a comparison CSV."""
    try:
        from tass.commands import ablate_impl, load_train_config

        base = load_train_config(config, seed=seed)
        axis_list = [a.strip() for a in axes.split(",") if a.strip()]
        result = ablate_impl(base, axis_list, out, [base.seed + i for i in range(seeds)])
        table = Table(title="Ablation summary")
        for column in ("variant", "runs", "median acc", "params"):
            table.add_column(column)
        for row in result.summary:
            acc = row["median_accuracy"]
            table.add_row(row["variant"], str(row["runs"]), "—" if acc is None else f"{acc:.4f}", str(row["trainable_parameters"]))
        console.print(table)
        rprint(f"[green]✅ CSV written to {result.csv_path}[/green]")
    except Exception as e:
        _fail("running ablations", e)


@app.command("version")
def version_command() -> None:
    """📋 Show version information."""
    rprint(f"[bold green]tass[/bold green] version [cyan]{__version__}[/cyan]")


def main() -> None:
    """Main CLI entry point."""
    os.environ.setdefault("FORCE_COLOR", "1")
    app()


if __name__ == "__main__":
    main()
