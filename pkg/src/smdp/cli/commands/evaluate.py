import typing

import click
import comma
import loguru

import smdp.cli.helpers
import smdp.experiments.stages
import smdp.input.config


logger = loguru.logger


@smdp.cli.helpers.cli_experiment_options
@smdp.cli.helpers.cli_opt_run
@click.pass_context
def evaluate(
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
    Solve the inverse problem with a trained checkpoint, compute the
    metrics of the experiment and print them as CSV on stdout.
    """
    with smdp.cli.helpers.report_errors():
        resolved = ctx.obj.resolve_config(experiment, config, overrides, full_scale, seed, out, workers)
        layout = smdp.experiments.stages.RunLayout.for_config(resolved)

        if dry_run:
            smdp.cli.helpers.echo_dry_run(resolved, smdp.input.config.STAGE_EVAL, {
                "metrics": layout.metrics(run),
                "inference_modes": resolved.inference_modes,
                "test_seed": smdp.experiments.stages.test_seed(resolved.seed),
            })
            return

        outcome = smdp.experiments.stages.evaluate(resolved, run=run, force=force, progress=ctx.obj.progress)

    smdp.cli.helpers.echo_outcome(outcome)
    if outcome.rows:
        click.echo(comma.dumps([row.to_dict() for row in outcome.rows]).rstrip())
