"""
Command Line Interface

    abm-flow [--config FILE] [--log-level LEVEL] <study> [options]

Studies: convergence, roundtrip, adaptive, order, mgfi, compare. A contract or
configuration error prints one diagnostic line and exits with status 2.
"""

import functools
from pathlib import Path
from typing import Any, Dict, Optional

import click
import structlog

from ..core.config import ConfigManager, StudyConfig
from ..core.exceptions import AbmFlowError
from ..core.flows import FIELD_NAMES
from ..core.models import PCMode, SolverKind
from ..utils.helpers import setup_logging
from . import reports, studies

logger = structlog.get_logger(__name__)

EXIT_CONTRACT = 2


def _parse_steps(ctx, param, value: Optional[str]):
    if value is None:
        return None
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter("expected a comma-separated list of integers, e.g. 10,20,40")


def study_options(fn):
    """Options shared by every study subcommand"""
    options = [
        click.option("--field", "field_name", type=click.Choice(FIELD_NAMES), default=None,
                     help="Velocity field from the catalog"),
        click.option("--solver", type=click.Choice([kind.value for kind in SolverKind]), default=None,
                     help="Integrator"),
        click.option("--steps", "steps_list", callback=_parse_steps, default=None,
                     help="Comma-separated step counts, e.g. 20,40,80,160; abm_adaptive needs each "
                          "count above warmup_steps + cooldown_steps"),
        click.option("--epsilon", type=float, default=None, help="Adaptive tolerance"),
        click.option("--mode", type=click.Choice([mode.value for mode in PCMode]), default=None,
                     help="Predictor-corrector mode"),
        click.option("--tau", type=float, default=None, help="Feature-injection threshold"),
        click.option("--seed", type=int, default=None, help="Seed for initial states and features"),
        click.option("--out", "output_dir", type=click.Path(file_okay=False, path_type=Path), default=None,
                     help="Output directory"),
        click.option("--plot/--no-plot", default=None, help="Also write SVG plots"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _load(ctx: click.Context, overrides: Dict[str, Any]) -> StudyConfig:
    return ConfigManager(ctx.obj.get("config_path")).load_study_config(overrides)


def handles_contract_errors(fn):
    """Turn library errors into a one-line diagnostic and exit status 2"""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except AbmFlowError as e:
            logger.error("study_failed", error=str(e), kind=type(e).__name__)
            click.echo(f"error: {e}", err=True)
            raise SystemExit(EXIT_CONTRACT)
    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="JSON key-value study config (default: $ABM_FLOW_CONFIG or study_config.json)")
@click.option("--log-level", default=None,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.pass_context
def main(ctx: click.Context, config_path: Optional[Path], log_level: Optional[str]):
    """ABM solver studies for rectified-flow ODEs"""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    setup_logging(log_level or ConfigManager(config_path).get_log_level())


@main.command()
@study_options
@click.pass_context
@handles_contract_errors
def convergence(ctx, **overrides):
    """Terminal error against ground truth for every step count"""
    cfg = _load(ctx, overrides)
    report = studies.run_convergence_study(cfg)
    summary = studies.convergence_summary(cfg, report)
    plot = {"x": "h", "y": "terminal_error", "title": f"{cfg.solver.value} on {cfg.field_name}"}
    reports.write_study("convergence", reports.rows_frame(report.rows), summary, cfg.output_dir,
                        plot if cfg.plot else None)
    slope = "exact" if report.exact else f"slope={report.fitted_slope:.3f}"
    click.echo(f"convergence: {slope} passed={summary['passed']} -> {cfg.output_dir}")


@main.command()
@study_options
@click.pass_context
@handles_contract_errors
def roundtrip(ctx, **overrides):
    """Inversion followed by reconstruction for every step count"""
    overrides["roundtrip_steps_list"] = overrides.pop("steps_list")
    cfg = _load(ctx, overrides)
    report = studies.run_roundtrip_study(cfg)
    summary = studies.roundtrip_summary(cfg, report)
    plot = {"x": "h", "y": "recon_error", "title": f"round trip, {cfg.solver.value} on {cfg.field_name}"}
    reports.write_study("roundtrip", reports.rows_frame(report.rows), summary, cfg.output_dir,
                        plot if cfg.plot else None)
    if report.exact:
        slope = "exact"
    elif report.fitted_slope is None:
        slope = "no fit"
    else:
        slope = f"slope={report.fitted_slope:.3f}"
    click.echo(f"roundtrip: {slope} passed={summary['passed']} -> {cfg.output_dir}")


@main.command()
@study_options
@click.pass_context
@handles_contract_errors
def adaptive(ctx, **overrides):
    """Adaptive round trips over the configured tolerances"""
    cfg = _load(ctx, overrides)
    rows = studies.run_adaptive_study(cfg)
    summary = studies.adaptive_summary(cfg, rows)
    plot = {"x": "nfe", "y": "terminal_error", "title": f"adaptive ABM on {cfg.field_name}"}
    reports.write_study("adaptive", reports.rows_frame(rows), summary, cfg.output_dir,
                        plot if cfg.plot else None)
    click.echo(f"adaptive: {len(rows)} tolerances, nfe={[row.nfe for row in rows]} -> {cfg.output_dir}")


@main.command()
@study_options
@click.pass_context
@handles_contract_errors
def order(ctx, **overrides):
    """Adaptive ABM error against the largest accepted step over order_steps_list"""
    overrides["order_steps_list"] = overrides.pop("steps_list")
    cfg = _load(ctx, overrides)
    report = studies.run_adaptive_order_study(cfg)
    summary = studies.adaptive_order_summary(cfg, report)
    plot = {"x": "max_step", "y": "terminal_error", "title": f"adaptive ABM order on {cfg.field_name}"}
    reports.write_study("adaptive_order", reports.rows_frame(report.rows), summary, cfg.output_dir,
                        plot if cfg.plot else None)
    slope = "exact" if report.exact else f"slope={report.fitted_slope:.3f}"
    click.echo(f"order: {slope} passed={summary['passed']} -> {cfg.output_dir}")


@main.command()
@study_options
@click.pass_context
@handles_contract_errors
def mgfi(ctx, **overrides):
    """Feature-injection masks and the injection ablation on seeded synthetic features"""
    cfg = _load(ctx, overrides)
    report = studies.run_mgfi_demo(cfg)
    summary = studies.mgfi_summary(cfg, report)
    reports.write_study("mgfi", reports.rows_frame(report.rows), summary, cfg.output_dir)
    reports.write_mgfi_artifacts(report, cfg.output_dir)
    ablation = studies.run_mgfi_ablation(cfg)
    reports.write_study("mgfi_ablation", reports.rows_frame(ablation),
                        studies.mgfi_ablation_summary(cfg, ablation), cfg.output_dir)
    click.echo(f"mgfi: {len(report.rows)} masks, {len(ablation)} ablation variants -> {cfg.output_dir}")


@main.command()
@study_options
@click.pass_context
@handles_contract_errors
def compare(ctx, **overrides):
    """Round trips of every solver at a matched NFE budget"""
    cfg = _load(ctx, overrides)
    rows = studies.run_comparison_study(cfg)
    summary = studies.comparison_summary(cfg, rows)
    reports.write_study("compare", reports.rows_frame(rows), summary, cfg.output_dir)
    click.echo(f"compare: best={summary['best_solver']} -> {cfg.output_dir}")


if __name__ == "__main__":
    main()
