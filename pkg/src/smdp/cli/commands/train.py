import typing

import click
import loguru

import smdp.cli.helpers
import smdp.experiments.stages
import smdp.input.config


logger = loguru.logger


@smdp.cli.helpers.cli_experiment_options
@smdp.cli.helpers.cli_opt_run
@click.pass_context
def train(
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
        run: str,
):
    """
    Train a score model on the stored trajectories (run "generate" first)
    and write its checkpoint and loss history.
    """
    with smdp.cli.helpers.report_errors():
        resolved = ctx.obj.resolve_config(experiment, config, overrides, full_scale, seed, out, workers)
        layout = smdp.experiments.stages.RunLayout.for_config(resolved)

        if dry_run:
            plan = resolved.train_plan()
            smdp.cli.helpers.echo_dry_run(resolved, smdp.input.config.STAGE_TRAIN, {
                "checkpoint": layout.checkpoint(run),
                "plan": plan.to_dict(),
                "total_epochs": plan.total_epochs,
            })
            return

        outcome = smdp.experiments.stages.train(resolved, run=run, force=force, progress=ctx.obj.progress)

    smdp.cli.helpers.echo_outcome(outcome)
