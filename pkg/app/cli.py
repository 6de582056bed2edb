"""
Command-line surface: single runs, sweep matrices, standalone analytics and trend verdicts

Exit status is 0 on success, 2 on a configuration error, 3 when the
verdict suite fails and 4 when a simulation run itself fails.
"""
import csv
import logging
import sys
from pathlib import Path
from typing import Optional

import click

from app.config import configure_logging, settings
from app.models.scenario import load_scenario
from app.services import harness
from app.services.analytics import SWEEP_FIELDS, analytic_sweep, compare_with_trace, load_analytic_params
from app.services.error_handler import RunErrorHandler
from app.utils.exceptions import AnalyticsDomainError, ScenarioConfigError, SimulationError

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_VERDICT = 3
EXIT_RUN = 4


def _config_error(source: str, error: Exception) -> None:
    logger.error(f"❌ {source}: {error}")
    click.echo(f"{source}: {error}", err=True)
    sys.exit(EXIT_CONFIG)


@click.group()
@click.option("--log-level", default=None, help="Overrides MANETSIM_LOG_LEVEL")
@click.pass_context
def cli(ctx: click.Context, log_level: Optional[str]) -> None:
    """Reactive MANET routing simulator"""
    configure_logging(log_level.upper() if log_level else None)
    handler = ctx.ensure_object(RunErrorHandler)
    ctx.call_on_close(lambda: logger.debug(f"📊 Pipeline: {handler.get_error_summary()['pipeline_stats']}"))


@cli.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--event-log", type=click.Path(dir_okay=False), default=None, help="Write the per-event trace here")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Append the metric row to this CSV")
@click.option("--validate", is_flag=True, help="Print cost formulas evaluated on the measured trace")
@click.pass_obj
def simulate(
    handler: RunErrorHandler, config: str, event_log: Optional[str], out: Optional[str], validate: bool
) -> None:
    """Run one scenario file and print its metric row"""
    try:
        scenario = load_scenario(config)
    except ScenarioConfigError as e:
        _config_error(config, e)

    try:
        result = harness.run(scenario, event_log_path=event_log)
    except SimulationError as e:
        handler.log_pipeline_stage("run", False)
        handler.log_run_failure(scenario.scenario_id, e)
        click.echo(f"run failed: {scenario.scenario_id}: {e}", err=True)
        sys.exit(EXIT_RUN)
    handler.log_pipeline_stage("run", True)
    for name, value in result.row.to_csv_dict().items():
        click.echo(f"{name:>18}  {value}")

    violated = [v for v in result.report.violations if v.count]
    if violated:
        click.echo("constraint violations: " + ", ".join(f"{v.constraint}={v.count}" for v in violated))

    if validate:
        comparison = compare_with_trace(result.trace, scenario.protocol)
        click.echo(comparison.model_dump_json(indent=2))

    if out:
        path = Path(out)
        rows = harness.read_rows(path) if path.exists() else []
        harness.write_rows([*rows, result.row], path)
        click.echo(f"row written to {path}")


@cli.command()
@click.argument("sweep")
@click.option("--seeds", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Per-run CSV (summary goes next to it)")
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Overrides MANETSIM_WORKERS")
@click.option("--duration", type=float, default=None, help="Override duration_s for every cell")
@click.pass_obj
def matrix(
    handler: RunErrorHandler,
    sweep: str,
    seeds: int,
    out: Optional[str],
    workers: Optional[int],
    duration: Optional[float],
) -> None:
    """Run a preset (mobility, scalability, traffic, trend) or a sweep YAML file"""
    try:
        spec = harness.load_sweep(sweep)
        if duration is not None:
            spec = spec.model_copy(update={"base": {**spec.base, "duration_s": duration}})
        scenarios = spec.expand(seeds)
    except ScenarioConfigError as e:
        _config_error(sweep, e)

    out_path = Path(out) if out else Path(settings.output_dir) / f"{spec.name}.csv"
    click.echo(f"{spec.name}: {len(scenarios)} runs -> {out_path}")

    rows = harness.run_matrix(scenarios, workers=workers or settings.workers, error_handler=handler)
    harness.write_rows(rows, out_path)
    handler.log_pipeline_stage("rows", True, len(rows))
    summary = harness.aggregate(rows)
    harness.write_summary(summary, harness.summary_path(out_path))

    failed = handler.failed_runs
    click.echo(f"{len(rows)} rows, {len(summary)} cells, {len(failed)} failed runs")
    for failure in failed:
        click.echo(f"  failed: {failure['scenario_id']}: {failure['error']}", err=True)


@cli.command()
@click.argument("params_file", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the sweep CSV here instead of stdout")
@click.pass_obj
def analytic(handler: RunErrorHandler, params_file: str, out: Optional[str]) -> None:
    """Sweep the cost formulas over ring counts and average degrees"""
    try:
        params, config = load_analytic_params(params_file)
        rows = analytic_sweep(params, config)
    except (ScenarioConfigError, AnalyticsDomainError) as e:
        handler.log_error("analytic", e, {"params_file": params_file})
        _config_error(params_file, e)
    handler.log_pipeline_stage("analytic", True)

    stream = open(out, "w", encoding="utf-8", newline="") if out else sys.stdout
    try:
        writer = csv.DictWriter(stream, fieldnames=SWEEP_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    finally:
        if out:
            stream.close()


@cli.command()
@click.argument("results", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.pass_obj
def verdict(handler: RunErrorHandler, results) -> None:
    """Evaluate the directional trend claims on one or more per-run CSVs"""
    rows = []
    try:
        for path in results:
            rows.extend(harness.read_rows(path))
    except ScenarioConfigError as e:
        _config_error(", ".join(results), e)

    summary = harness.verdict(rows, error_handler=handler)
    for claim in summary.claims:
        margin = f"{claim.margin:+.6g}" if claim.margin is not None else "n/a"
        click.echo(f"{claim.verdict.upper():<13} {claim.claim}  margin={margin}  {claim.detail}")
    click.echo(
        f"{summary.passed} passed, {summary.failed} failed, {summary.inconclusive} inconclusive: "
        f"suite {'PASSED' if summary.suite_passed else 'FAILED'}"
    )
    if not summary.suite_passed:
        sys.exit(EXIT_VERDICT)


if __name__ == "__main__":
    cli()
