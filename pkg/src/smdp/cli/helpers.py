import contextlib
import json
import sys
import typing

import click
import click_help_colors
import click_spinner
import loguru

import smdp.__version__
import smdp.exceptions
import smdp.experiments.stages
import smdp.input.config
import smdp.input.parsing


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "chain_functions",

    "SmdpCliContextObject",
    "AbstractSmdpCliContext",

    "report_errors",
    "echo_dry_run",
    "echo_outcome",

    "cli_root_group_green",
    "cli_opt_verbose",
    "cli_opt_quiet",
    "cli_opt_version",
    "cli_opt_experiment",
    "cli_opt_config",
    "cli_opt_set",
    "cli_opt_full_scale",
    "cli_opt_seed",
    "cli_opt_out",
    "cli_opt_force",
    "cli_opt_dry_run",
    "cli_opt_workers",
    "cli_opt_run",

    "cli_root",
    "cli_experiment_options",
]


logger = loguru.logger


LOG_FORMAT = "<green>{time:HH:mm:ss}</green> <level>{level: <7}</level> {message}"


# From: https://stackoverflow.com/a/58005342/408734
def chain_functions(*funcs: typing.List[typing.Callable]) -> typing.Callable:

    def _chain(*args, **kwargs):
        cur_args, cur_kwargs = args, kwargs
        ret = None
        for f in reversed(funcs):
            f = typing.cast(typing.Callable, f)
            cur_args, cur_kwargs = (f(*cur_args, **cur_kwargs), ), {}
            ret = cur_args[0]
        return ret

    return _chain


class SmdpCliContextObject:

    _verbose: bool = False
    _quiet: bool = False
    _sink_id: typing.Optional[int] = None

    def __init__(
            self,
            verbose: typing.Optional[bool] = None,
            quiet: typing.Optional[bool] = None,
    ):
        if verbose is not None:
            self._verbose = verbose
        if quiet is not None:
            self._quiet = quiet

    @property
    def log_level(self) -> str:
        if self._verbose:
            return "DEBUG"
        if self._quiet:
            return "WARNING"
        return "INFO"

    @property
    def quiet(self) -> bool:
        return self._quiet

    @property
    def progress(self) -> bool:
        """Progress bars only when stderr is a terminal and output is not quieted."""
        return not self._quiet and sys.stderr.isatty()

    def install_logging(self) -> None:
        # a single stderr sink, replacing loguru's default one
        logger.remove()
        self._sink_id = logger.add(sys.stderr, level=self.log_level, format=LOG_FORMAT)
        logger.debug("CLI: logging at level {}", self.log_level)

    def resolve_config(
            self,
            experiment: typing.Optional[str],
            config: typing.Optional[str],
            overrides: typing.Sequence[str],
            full_scale: bool,
            seed: typing.Optional[int],
            out: typing.Optional[str],
            workers: typing.Optional[int] = None,
    ) -> smdp.input.config.ExperimentConfig:

        def do_resolve():
            resolved = smdp.input.config.ExperimentConfig.from_sources(
                experiment=experiment,
                filename=config,
                overrides=list(overrides),
                full_scale=full_scale,
                seed=seed,
                out=out,
            )
            if workers is not None:
                resolved = resolved.replace({"train.workers": int(workers)})
            return resolved

        if self._quiet or not sys.stderr.isatty():
            resolved = do_resolve()
        else:
            click.secho("Resolving configuration...  ", nl=False, err=True)
            with click_spinner.spinner(stream=sys.stderr):
                resolved = do_resolve()
            click.secho("DONE!", nl=True, err=True, fg="green", bold=True)

        logger.debug("CLI: resolved {}", resolved)
        return resolved


class AbstractSmdpCliContext:

    def __init__(self, ctx_obj):
        self._ctx_obj = ctx_obj

    @property
    def obj(self) -> SmdpCliContextObject:
        return self._ctx_obj

    @obj.setter
    def obj(
            self,
            value: typing.Optional[SmdpCliContextObject]
    ) -> typing.NoReturn:
        self._ctx_obj = value


@contextlib.contextmanager
def report_errors():
    """
    Turns library errors escaping a command into a red ``ERROR:`` line on
    stderr and the process exit code of the error.
    """
    try:
        yield
    except smdp.exceptions.SmdpError as exc:
        logger.debug("CLI: {} escaped the command", type(exc).__name__)
        click.secho("ERROR: ", nl=False, err=True, fg="red", bold=True)
        click.secho(exc.message, err=True, fg="red")
        sys.exit(exc.exit_code)


cli_root_group_green = click.group(
    cls=click_help_colors.HelpColorsGroup,
    help_headers_color='bright_green',
    help_options_color='green'
)

cli_opt_verbose = click.option(
    "-v", "--verbose",
    is_flag=True, default=False,
    help="Log debugging details."
)

cli_opt_quiet = click.option(
    "-q", "--quiet",
    is_flag=True, default=False,
    help="Only log warnings and errors, no progress bars."
)

cli_opt_version = click.version_option(version=smdp.__version__.__version__)

cli_opt_experiment = click.option(
    "--experiment", "-e",
    type=click.Choice(smdp.input.config.EXPERIMENTS, case_sensitive=False),
    default=None, metavar="EXPERIMENT",
    help="Experiment whose defaults to start from ({}).".format(", ".join(smdp.input.config.EXPERIMENTS))
)

cli_opt_config = click.option(
    "--config", "-c",
    type=click.Path(dir_okay=False),
    default=None, envvar=smdp.input.config.CONFIG_ENV_VAR, metavar="PATH",
    help="Experiment configuration (JSON or YAML)."
)

cli_opt_set = click.option(
    "--set", "overrides",
    multiple=True, metavar="KEY=VALUE",
    help="Override a configuration leaf by dotted path (repeatable)."
)

cli_opt_full_scale = click.option(
    "--full-scale", "--paper-scale", "full_scale",
    is_flag=True, default=False,
    help="Start from the full-size settings instead of the desk-scale ones."
)

cli_opt_seed = click.option(
    "--seed",
    type=int, default=None, metavar="N",
    help="Seed of the run."
)

cli_opt_out = click.option(
    "--out", "-o",
    type=click.Path(file_okay=False),
    default=None, metavar="DIR",
    help="Output directory."
)

cli_opt_force = click.option(
    "--force",
    is_flag=True, default=False,
    help="Overwrite artifacts produced from another configuration."
)

cli_opt_dry_run = click.option(
    "-y", "--dry-run",
    is_flag=True, envvar="SMDP_DRY_RUN", default=False,
    help="Print the resolved configuration and do not run anything."
)

cli_opt_workers = click.option(
    "--workers", "-j",
    type=click.IntRange(min=1), default=None, metavar="N",
    help="Worker threads (capped by $SMDP_THREADS)."
)


cli_root = chain_functions(*[
    cli_root_group_green,
    cli_opt_verbose, cli_opt_quiet, cli_opt_version,
    click.pass_context,
])

cli_experiment_options = chain_functions(*[
    cli_opt_experiment, cli_opt_config, cli_opt_set, cli_opt_full_scale,
    cli_opt_seed, cli_opt_out, cli_opt_force, cli_opt_dry_run, cli_opt_workers,
])

cli_opt_run = click.option(
    "--run", "-r",
    default=smdp.experiments.stages.DEFAULT_RUN, show_default=True, metavar="NAME",
    help="Name of the run subdirectory holding the checkpoint and metrics."
)


def echo_dry_run(
        config: smdp.input.config.ExperimentConfig,
        stage: str,
        extra: typing.Optional[typing.Dict[str, typing.Any]] = None,
) -> None:
    """Prints the resolved configuration of a stage as JSON on stdout."""
    payload = {
        "stage": stage,
        "config_hash": config.config_hash(stage),
        "config": config.to_dict(),
    }
    payload.update(extra or dict())
    click.echo(json.dumps(payload, indent=2, sort_keys=True, cls=smdp.input.parsing.SmdpJSONEncoder))


def echo_outcome(outcome: smdp.experiments.stages.StageOutcome) -> None:
    if outcome.skipped:
        click.secho("Stage '{}' is up to date (hash {}).".format(
            outcome.key, outcome.config_hash[:12]), err=True, fg="yellow")
    else:
        click.secho("Stage '{}' done (hash {}).".format(
            outcome.key, outcome.config_hash[:12]), err=True, fg="green", bold=True)
    for path in outcome.artifacts:
        click.secho("  {}".format(path), err=True)
