import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import click
from dotenv import load_dotenv

from config import ScenarioConfig, load_scenario, parse_overrides
from engine import SimulationError
from report import ComparisonError, compare as compare_reports, format_table
from simulator import run as run_simulation
from workloads import scan_trace

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "TIERSIM_LOG_LEVEL"
EXIT_OOM = 2


# ----------------------------
# Helpers
# ----------------------------
def _load(path: str, overrides: tuple[str, ...]) -> ScenarioConfig:
    return load_scenario(path, parse_overrides(overrides))


def _fail(e: SimulationError) -> click.ClickException:
    message = str(e)
    if not message.startswith("❌"):
        message = f"❌ {message}"
    return click.ClickException(message)


# ----------------------------
# Commands
# ----------------------------
@click.group()
def cli():
    """Tiered-memory page migration simulator."""


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a scenario key.")
@click.option("--output", "output", default=None, help="CSV path; the summary goes to <output>.summary.json.")
def run(config_path, overrides, output):
    """Run one scenario and write its CSV series and summary."""
    try:
        config = _load(config_path, overrides)
        if output:
            config.output.csv = output
            config.output.summary = None
        report = run_simulation(config)
    except SimulationError as e:
        raise _fail(e)

    report.write(config.output.csv, config.output.summary_path)
    if not report.ok:
        click.echo(click.style(f"❌ {report.summary.message}", fg="red"), err=True)
        click.echo(f"Partial results written to {config.output.csv}", err=True)
        sys.exit(EXIT_OOM)
    click.echo(click.style("✅ ", fg="green") + f"{config.name}: total cost {report.summary.total_cost_ns} ns")
    click.echo(f"Results written to {config.output.csv}")


@cli.command()
@click.argument("config_paths", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--baseline", "baseline_path", required=True, type=click.Path(dir_okay=False))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a key in every scenario.")
@click.option("--jobs", default=1, show_default=True, type=click.IntRange(min=1), help="Parallel simulations.")
def compare(config_paths, baseline_path, overrides, jobs):
    """Run scenarios against a baseline and print total-cost ratios."""
    try:
        baseline = _load(baseline_path, overrides)
        configs = [_load(p, overrides) for p in config_paths]
        mismatched = [c.name for c in configs if c.workload_fingerprint() != baseline.workload_fingerprint()]
        if mismatched:
            raise ComparisonError(f"❌ Workload or seed differs from baseline '{baseline.name}': {', '.join(mismatched)}")

        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                reports = list(pool.map(run_simulation, [baseline, *configs]))
        else:
            reports = [run_simulation(c) for c in [baseline, *configs]]
        rows = compare_reports(reports[1:], reports[0])
    except SimulationError as e:
        raise _fail(e)

    for report in reports:
        if not report.ok:
            click.echo(click.style(f"⚠️ {report.summary.scenario}: {report.summary.message}", fg="yellow"), err=True)
    click.echo(format_table(rows))


@cli.command("trace-validate")
@click.argument("trace_path", type=click.Path(dir_okay=False))
def trace_validate(trace_path):
    """Check a trace file and print what it contains."""
    if not os.path.isfile(trace_path):
        raise click.ClickException(f"❌ Trace file not found: {trace_path}")
    try:
        summary = scan_trace(trace_path)
    except SimulationError as e:
        raise _fail(e)
    click.echo(click.style("✅ ", fg="green") + f"{summary.accesses} accesses from {len(summary.processes)} processes")
    for pid in summary.processes:
        click.echo(f"  pid {pid}: first at {summary.first_seen_ns[pid] / 1e9:.3f}s, {summary.rss_pages(pid)} pages")


def main():
    load_dotenv()
    logging.basicConfig(
        level=os.getenv(LOG_LEVEL_ENV, "WARNING").upper(),
        format="%(levelname)s:%(name)s:%(message)s",
    )
    cli()


if __name__ == "__main__":
    main()
