"""Command line entry point: ``qtag run | replay | validate``.

Exit codes: 0 success, 2 invalid configuration or trace, 3 internal
invariant violation (causality or capability abort, event budget),
4 replay divergence or failed causality audit.
"""

from __future__ import annotations

import sys

import click

from .config import dump_config, load_config
from .errors import CapabilityViolation, CausalityViolation, ConfigurationError, EngineError, ReplayMismatch

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INVARIANT = 3
EXIT_DIVERGED = 4


def _load(path):
    try:
        return load_config(path)
    except ConfigurationError as exc:
        for where, msg in exc.errors:
            click.echo(f"error: {where}: {msg}" if where else f"error: {msg}", err=True)
        sys.exit(EXIT_INVALID)
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INVALID)


@click.group()
def main():
    """Simulate location tagging sessions and spoofing attacks."""


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), envvar="QTAG_SEED", help="Master seed (env QTAG_SEED).")
@click.option("--trials", type=click.IntRange(min=1), help="Trials per configuration.")
@click.option("--workers", type=click.IntRange(min=1), envvar="QTAG_WORKERS", help="Worker processes (env QTAG_WORKERS).")
@click.option("--format", "fmt", type=click.Choice(["table", "records"]), default="table", show_default=True)
@click.option("--method", type=click.Choice(["auto", "event", "batch"]), help="Monte Carlo estimator.")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), help="Also write one session's trace here.")
def run(config, seed, trials, workers, fmt, method, trace_path):
    """Run the experiment described by CONFIG and print a report."""
    from .engine.runner import run as run_session
    from .experiment import run_experiment

    cfg = _load(config)
    try:
        report = run_experiment(cfg, trials=trials, seed=seed, workers=workers, method=method)
        if trace_path:
            points = cfg.sweep_points()
            base = cfg.with_values({"experiment.sweep": {}})
            session_cfg = base.with_values(points[0]) if points and points[0] else base
            run_session(session_cfg, seed).write_trace(trace_path)
    except (CausalityViolation, CapabilityViolation, EngineError) as exc:
        click.echo(f"invariant violation: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_INVARIANT)
    except ConfigurationError as exc:
        for where, msg in exc.errors:
            click.echo(f"error: {where}: {msg}", err=True)
        sys.exit(EXIT_INVALID)
    report.emit(click.get_text_stream("stdout"), fmt)


@main.command()
@click.argument("trace", type=click.Path(exists=True, dir_okay=False))
def replay(trace):
    """Re-execute TRACE, compare record by record and re-audit causality."""
    from .engine.runner import replay as replay_trace

    try:
        report = replay_trace(trace)
    except (ReplayMismatch, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    click.echo(report.describe())
    sys.exit(EXIT_OK if report.ok else EXIT_DIVERGED)


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--show", is_flag=True, help="Print the config with defaults filled in.")
def validate(config, show):
    """Check CONFIG and list every problem found."""
    cfg = _load(config)
    if show:
        click.echo(dump_config(cfg), nl=False)
    else:
        click.echo("ok")


if __name__ == "__main__":
    main()
