import typing

import click
import loguru

import smdp.cli.helpers
import smdp.experiments.stages
import smdp.input.config


logger = loguru.logger


@smdp.cli.helpers.cli_experiment_options
@click.pass_context
def generate(
        ctx: smdp.cli.helpers.AbstractSmdpCliContext,
        experiment: typing.Optional[str],
        config: typing.Optional[str],
        overrides: typing.Tuple[str, ...],
        full_scale: bool,
        seed: typing.Optional[int],
        out: typing.Optional[str],
        force: bool,
        dry_run: bool,
        workers: typing.Optional[int],
):
    """
    Simulate the training trajectories of the experiment and store them
    in the run directory.
    """
    with smdp.cli.helpers.report_errors():
        resolved = ctx.obj.resolve_config(experiment, config, overrides, full_scale, seed, out, workers)
        layout = smdp.experiments.stages.RunLayout.for_config(resolved)

        if dry_run:
            smdp.cli.helpers.echo_dry_run(resolved, smdp.input.config.STAGE_GENERATE, {
                "dataset": layout.dataset,
            })
            return

        outcome = smdp.experiments.stages.generate(resolved, force=force, progress=ctx.obj.progress)

    smdp.cli.helpers.echo_outcome(outcome)
