import typing

import click
import loguru

import smdp.cli.helpers
import smdp.cli.logo
import smdp.experiments.reproduce
import smdp.helpers.parallel
import smdp.input.config


logger = loguru.logger


@click.argument(
    "target",
    type=click.Choice(
        smdp.experiments.reproduce.TARGETS + sorted(smdp.experiments.reproduce.TARGET_ALIASES),
        case_sensitive=False,
    ),
)
@smdp.cli.helpers.cli_experiment_options
@click.option(
    "--no-check",
    is_flag=True, default=False,
    help="Write the reports without enforcing the acceptance thresholds."
)
@click.pass_context
def reproduce(
        ctx: smdp.cli.helpers.AbstractSmdpCliContext,
        target: str,
        experiment: typing.Optional[str],
        config: typing.Optional[str],
        overrides: typing.Tuple[str, ...],
        full_scale: bool,
        seed: typing.Optional[int],
        out: typing.Optional[str],
        force: bool,
        dry_run: bool,
        workers: typing.Optional[int],
        no_check: bool,
):
    """
    Run every cell of the reproduction TARGET over the configured seeds,
    then write the aggregated tables and check their acceptance thresholds.

    WORKERS here is the number of cells run concurrently.
    """
    target = smdp.experiments.reproduce.resolve_target(target)
    experiment = experiment or smdp.experiments.reproduce.TARGET_EXPERIMENTS[target]

    with smdp.cli.helpers.report_errors():
        base = ctx.obj.resolve_config(experiment, config, overrides, full_scale, seed, out)

        if dry_run:
            cells = (
                [] if target == smdp.experiments.reproduce.TARGET_CONVERGENCE
                else smdp.experiments.reproduce.cells_for(target, base)
            )
            smdp.cli.helpers.echo_dry_run(base, smdp.input.config.STAGE_EVAL, {
                "target": target,
                "seeds": base.seeds,
                "cells": [
                    {
                        "name": cell.name,
                        "group": cell.group,
                        "config_hash": cell.config.config_hash(smdp.input.config.STAGE_EVAL),
                    }
                    for cell in cells
                ],
            })
            return

        if not ctx.obj.quiet:
            click.secho(smdp.cli.logo.SMDP_LOGO_5L, err=True, fg="green")
            click.secho("  {}: reproducing '{}'\n".format(smdp.cli.logo.SMDP_TAGLINE, target), err=True)

        result = smdp.experiments.reproduce.reproduce(
            target=target,
            base=base,
            force=force,
            progress=ctx.obj.progress,
            workers=smdp.helpers.parallel.worker_count(workers or 1),
            check=not no_check,
        )

    for failure in result.failures:
        click.secho("  failed cell: {}".format(failure), err=True, fg="yellow")
    for failure in result.acceptance_failures:
        click.secho("  missed: {}".format(failure), err=True, fg="yellow")
    click.secho("Wrote {} report(s) for '{}'.".format(len(result.artifacts), target), err=True, fg="green", bold=True)
    for path in result.artifacts:
        click.echo(path)
