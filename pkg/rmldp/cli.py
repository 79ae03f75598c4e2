"""Command-line interface for rmldp."""

import sys
from pathlib import Path
from typing import List, NoReturn, Optional

import typer
from rich.console import Console
from rich.table import Table

from .config import get_settings
from .ensemble import load_ensemble, validate
from .exceptions import RmldpError, StageError
from .models import CheckStatus, ExperimentConfig, InvariantResult, PsiDescriptor, PsiKind
from .services import ExperimentService, VerificationService
from .smoothing import build_kernel, envelopes, integral_convergence, verify_sandwich
from .utils.csvio import write_csv, write_json
from .utils.logging import setup_logging

app = typer.Typer(
    name="rmldp",
    help="rmldp - precise large deviations for products of random matrices",
    add_completion=False,
)

console = Console()

CONFIG_HELP = "Experiment config (JSON)"
SEED_HELP = "Seed; falls back to the config, then RMLDP_SEED"
WORKERS_HELP = "Worker threads"
RESOLUTION_HELP = "Sphere grid resolution"
OUT_HELP = "Output directory (overrides the config)"


@app.callback()
def main_callback(
    log_level: Optional[str] = typer.Option(None, help="Log level"),
    json_logs: bool = typer.Option(False, help="Render logs as JSON"),
) -> None:
    """Set up logging before any command runs."""
    settings = get_settings()
    setup_logging(log_level or settings.log_level, json_logs or settings.json_logs)


def _fail(error: Exception) -> NoReturn:
    if isinstance(error, StageError):
        console.print(f"[red]Stage '{error.stage}' failed: {error.cause}[/red]")
    else:
        console.print(f"[red]Error: {error}[/red]")
    sys.exit(1)


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6g}"


def _service(
    config: Path,
    seed: Optional[int],
    workers: Optional[int],
    resolution: Optional[int],
    out: Optional[Path],
) -> ExperimentService:
    experiment = ExperimentConfig.load(config)
    return ExperimentService(experiment, seed=seed, workers=workers, resolution=resolution, output_dir=out)


def _results_table(title: str, results: List[InvariantResult]) -> Table:
    table = Table(title=title)
    table.add_column("Module", style="cyan")
    table.add_column("Check", style="cyan")
    table.add_column("Status")
    table.add_column("Measured", style="green")
    table.add_column("Tolerance", style="dim")
    colors = {CheckStatus.PASSED: "green", CheckStatus.FAILED: "red", CheckStatus.SKIPPED: "yellow"}
    for result in results:
        status = CheckStatus(result.status)
        table.add_row(
            result.module,
            result.name,
            f"[{colors[status]}]{status.value}[/{colors[status]}]",
            _fmt(result.measured),
            _fmt(result.tolerance),
        )
    return table


@app.command()
def spectral(
    config: Path = typer.Option(..., "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, help=SEED_HELP),
    workers: Optional[int] = typer.Option(None, help=WORKERS_HELP),
    resolution: Optional[int] = typer.Option(None, help=RESOLUTION_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
) -> None:
    """Solve the transfer-operator eigenproblem at every configured tilt."""
    try:
        service = _service(config, seed, workers, resolution, out)
        console.print(f"[bold green]Spectral solve[/bold green] ({service.config.name})")
        solutions = service.spectral()
    except (RmldpError, ValueError) as e:
        _fail(e)

    table = Table(title="Dominant eigenvalues")
    table.add_column("s", style="cyan")
    table.add_column("kappa(s)", style="green")
    table.add_column("residual", style="dim")
    table.add_column("iterations", style="dim")
    table.add_column("gap", style="dim")
    for solution in solutions:
        table.add_row(
            _fmt(solution.s), _fmt(solution.kappa), _fmt(solution.residual), str(solution.iterations), _fmt(solution.gap_estimate)
        )
    console.print(table)
    console.print(f"Wrote {service.output_dir / 'spectral.json'}")


@app.command()
def cumulants(
    config: Path = typer.Option(..., "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, help=SEED_HELP),
    workers: Optional[int] = typer.Option(None, help=WORKERS_HELP),
    resolution: Optional[int] = typer.Option(None, help=RESOLUTION_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
) -> None:
    """Build the interpolant of Lambda = log kappa and its rate function."""
    try:
        service = _service(config, seed, workers, resolution, out)
        console.print(f"[bold green]Cumulant model[/bold green] ({service.config.name})")
        model = service.cumulants()
        points = [model.rate_point(s) for s in service.tilts()]
    except (RmldpError, ValueError) as e:
        _fail(e)

    table = Table(title="Rate function at the configured tilts")
    table.add_column("s", style="cyan")
    table.add_column("q = Lambda'(s)", style="green")
    table.add_column("sigma_s", style="green")
    table.add_column("Lambda*(q)", style="green")
    table.add_column("routes agree", style="dim")
    for point in points:
        agree = "yes" if point.agree else "[red]no[/red]"
        table.add_row(_fmt(point.s), _fmt(point.q), _fmt(point.sigma_s), _fmt(point.lambda_star), agree)
    console.print(table)
    console.print(f"Wrote {service.output_dir / 'cumulants.csv'}")


@app.command()
def estimate(
    config: Path = typer.Option(..., "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, help=SEED_HELP),
    workers: Optional[int] = typer.Option(None, help=WORKERS_HELP),
    resolution: Optional[int] = typer.Option(None, help=RESOLUTION_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
) -> None:
    """Estimate every configured probability by enumeration or Monte Carlo."""
    try:
        service = _service(config, seed, workers, resolution, out)
        console.print(f"[bold green]Estimates[/bold green] ({service.config.name}, seed {service.seed})")
        records = service.estimates()
    except (RmldpError, ValueError) as e:
        _fail(e)

    table = Table(title="Estimates")
    for column in ("theorem", "method", "s", "n", "l", "value", "rel. s.e."):
        table.add_column(column, style="cyan" if column in ("theorem", "method") else "green")
    for record in records:
        table.add_row(
            str(record.theorem), str(record.method), _fmt(record.s), str(record.n), _fmt(record.l),
            _fmt(record.value), _fmt(record.rel_std_error),
        )
    console.print(table)
    console.print(f"Wrote {service.output_dir / 'estimates.csv'}")


@app.command()
def predict(
    config: Path = typer.Option(..., "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, help=SEED_HELP),
    workers: Optional[int] = typer.Option(None, help=WORKERS_HELP),
    resolution: Optional[int] = typer.Option(None, help=RESOLUTION_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
) -> None:
    """Evaluate the closed-form asymptotics for every configured case."""
    try:
        service = _service(config, seed, workers, resolution, out)
        console.print(f"[bold green]Predictions[/bold green] ({service.config.name})")
        predictions = service.predictions()
    except (RmldpError, ValueError) as e:
        _fail(e)

    table = Table(title="Predictions")
    for column in ("theorem", "s", "n", "l", "value", "log value"):
        table.add_column(column, style="cyan" if column == "theorem" else "green")
    for prediction in predictions:
        table.add_row(
            str(prediction.theorem), _fmt(prediction.s), str(prediction.n), _fmt(prediction.l),
            _fmt(prediction.value), _fmt(prediction.log_value),
        )
    console.print(table)
    console.print(f"Wrote {service.output_dir / 'predictions.csv'}")


@app.command()
def compare(
    config: Path = typer.Option(..., "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, help=SEED_HELP),
    workers: Optional[int] = typer.Option(None, help=WORKERS_HELP),
    resolution: Optional[int] = typer.Option(None, help=RESOLUTION_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
) -> None:
    """Estimates against predictions, with ratios and rate gaps."""
    try:
        service = _service(config, seed, workers, resolution, out)
        console.print(f"[bold green]Comparison[/bold green] ({service.config.name}, seed {service.seed})")
        rows = service.compare()
    except (RmldpError, ValueError) as e:
        _fail(e)

    table = Table(title="Estimate / prediction")
    for column in ("theorem", "s", "n", "l", "estimate", "prediction", "ratio", "95% CI", "rate gap"):
        table.add_column(column, style="cyan" if column == "theorem" else "green")
    for row in rows:
        table.add_row(
            row.theorem.value, _fmt(row.s), str(row.n), _fmt(row.l), _fmt(row.estimate.value),
            _fmt(row.prediction.value), _fmt(row.ratio), f"[{_fmt(row.ratio_ci[0])}, {_fmt(row.ratio_ci[1])}]",
            _fmt(row.rate_gap),
        )
    console.print(table)
    console.print(f"Wrote {service.output_dir / 'comparison.csv'}")


@app.command()
def run(
    config: Path = typer.Option(..., "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, help=SEED_HELP),
    workers: Optional[int] = typer.Option(None, help=WORKERS_HELP),
    resolution: Optional[int] = typer.Option(None, help=RESOLUTION_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
    dry_run: bool = typer.Option(False, "--dry-run", help="Only validate the config"),
) -> None:
    """Run every stage and the configured acceptance checks."""
    try:
        service = _service(config, seed, workers, resolution, out)
        console.print(f"[bold green]Running {service.config.name}[/bold green]")
        report = service.run(dry_run=dry_run)
    except (RmldpError, ValueError) as e:
        _fail(e)

    if dry_run:
        console.print("[green]Config is valid[/green]")
        return
    console.print(f"{len(report.rows)} comparison rows, {len(report.files)} files in {service.output_dir}")
    if report.checks:
        console.print(_results_table("Acceptance checks", report.checks))
    if not report.passed:
        console.print("[red]Some acceptance checks failed[/red]")
        sys.exit(1)


@app.command()
def verify(
    config: Path = typer.Option(..., "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, help=SEED_HELP),
    workers: Optional[int] = typer.Option(None, help=WORKERS_HELP),
    resolution: Optional[int] = typer.Option(None, help=RESOLUTION_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
    suite: Optional[List[str]] = typer.Option(None, "--suite", help="Run only these suites"),
    strict: bool = typer.Option(False, help="Exit with status 1 when an invariant fails"),
) -> None:
    """Measure the invariants of every numerical layer."""
    try:
        experiment = ExperimentConfig.load(config)
        ensemble = load_ensemble(experiment.ensemble)
        service = VerificationService.from_config(
            experiment, ensemble, seed=seed, workers=workers, resolution=resolution, suites=suite or None
        )
        console.print(f"[bold green]Verifying {experiment.name}[/bold green]")
        report = service.run(out or experiment.output_dir)
    except (RmldpError, ValueError) as e:
        _fail(e)

    console.print(_results_table("Invariants", report.results))
    console.print(
        f"passed {report.count(CheckStatus.PASSED)}, failed {report.count(CheckStatus.FAILED)}, "
        f"skipped {report.count(CheckStatus.SKIPPED)}"
    )
    if strict and not report.passed:
        sys.exit(1)


@app.command()
def kernel(
    epsilon: List[float] = typer.Option([0.2, 0.1, 0.05], "--epsilon", "-e", help="Envelope radii"),
    s: float = typer.Option(1.0, help="Tilt in exp(-s y) psi(y)"),
    psi: PsiKind = typer.Option(PsiKind.INTERVAL, help="Target family"),
    a: float = typer.Option(0.0, help="End point of the half-line or interval"),
    delta: float = typer.Option(1.0, help="Interval length"),
    out: Path = typer.Option(Path("results/kernel"), "--out", "-o", help="Output directory"),
) -> None:
    """Smoothing kernel, envelopes and the sandwich check for one target function."""
    try:
        descriptor = PsiDescriptor(kind=psi, a=a, delta=delta if psi == PsiKind.INTERVAL else None)
        console.print(f"[bold green]Smoothing {descriptor.label} at s={s:g}[/bold green]")
        reports = []
        for eps in sorted(epsilon, reverse=True):
            smoothing = build_kernel(eps)
            envelope = envelopes(descriptor, s, eps)
            reports.append(verify_sandwich(envelope, smoothing))
            write_csv(out / f"kernel_eps{eps:g}.csv", ["u", "rho"], smoothing.to_rows())
            write_csv(out / f"envelope_eps{eps:g}.csv", ["y", "psi", "psi_plus", "psi_minus"], envelope.to_rows())
        convergence = integral_convergence(descriptor, s, epsilon)
        write_json(
            out / "sandwich.json",
            {
                "psi": descriptor.model_dump(mode="json"),
                "s": s,
                "reports": [report.model_dump(mode="json") for report in reports],
                "convergence": convergence,
            },
        )
    except (RmldpError, ValueError) as e:
        _fail(e)

    table = Table(title="Sandwich check")
    table.add_column("epsilon", style="cyan")
    table.add_column("C_rho", style="green")
    table.add_column("C_rho (grid)", style="green")
    table.add_column("max violation", style="green")
    for report in reports:
        table.add_row(_fmt(report.epsilon), _fmt(report.c_rho), _fmt(report.c_rho_empirical), _fmt(report.max_violation))
    console.print(table)
    console.print(f"int exp(-sy) psi(y) dy = {_fmt(convergence['target'])}")


@app.command(name="validate")
def validate_ensemble(
    ensemble: Path = typer.Argument(..., help="Ensemble file (JSON)"),
    depth: Optional[int] = typer.Option(None, help="Longest product searched"),
) -> None:
    """Condition report for an ensemble file."""
    try:
        report = validate(load_ensemble(ensemble), depth)
    except (RmldpError, ValueError) as e:
        _fail(e)

    table = Table(title=f"Conditions for {ensemble.name}")
    table.add_column("Condition", style="cyan")
    table.add_column("Value", style="green")
    table.add_row("Allowable atoms", str(report.allowable))
    table.add_row("Strictly positive product", f"{report.strictly_positive_product_found} (depth {report.positive_depth})")
    table.add_row("Proximal product", f"{report.proximal_product_found} (depth {report.proximal_depth})")
    table.add_row("Non-arithmetic (heuristic)", str(report.nonarithmetic_heuristic))
    if report.lattice_span is not None:
        table.add_row("Lattice span", f"[yellow]{report.lattice_span:.6g}[/yellow]")
    table.add_row("Search depth", str(report.search_depth))
    table.add_row("Moments", report.i_mu_note)
    console.print(table)


@app.command()
def config(
    show_all: bool = typer.Option(False, help="Show all configuration values"),
) -> None:
    """Show the effective settings."""
    settings = get_settings()

    console.print("[bold blue]rmldp configuration[/bold blue]")
    table = Table(title="Configuration Settings")
    table.add_column("Setting", style="cyan")
    table.add_column("Value", style="green")
    table.add_column("Description", style="dim")

    names = ["resolution", "n_cheb", "s_min", "s_max", "seed", "workers", "log_level"]
    if show_all:
        names = list(type(settings).model_fields)
    for name in names:
        field = type(settings).model_fields[name]
        table.add_row(name, str(getattr(settings, name)), field.description or "")
    console.print(table)

    env_file = Path(".env")
    if env_file.exists():
        console.print(f"\n[green]Environment file found: {env_file.absolute()}[/green]")


@app.command()
def version() -> None:
    """Show version information."""
    from . import __version__

    console.print(f"[bold green]rmldp[/bold green] version [cyan]{__version__}[/cyan]")


def main() -> None:
    """Main CLI entry point."""
    app()


if __name__ == "__main__":
    main()
