import sys

import smdp.cli.commands.evaluate
import smdp.cli.commands.generate
import smdp.cli.commands.reproduce
import smdp.cli.commands.train
import smdp.cli.helpers


try:
    import dotenv

    if not dotenv.load_dotenv():
        dotenv.load_dotenv(dotenv.find_dotenv())

except ImportError:
    raise


@smdp.cli.helpers.cli_root
def cli(ctx: smdp.cli.helpers.AbstractSmdpCliContext, verbose, quiet):
    """
    Train score models on simulated physical trajectories and solve the
    inverse problems of the bundled experiments (toy-sde, affine-sde and
    heat-equation).
    """
    ctx.obj = smdp.cli.helpers.SmdpCliContextObject(
        verbose=verbose,
        quiet=quiet,
    )
    ctx.obj.install_logging()


cli_generate = cli.command(name="generate")(smdp.cli.commands.generate.generate)
cli_train = cli.command(name="train")(smdp.cli.commands.train.train)
cli_eval = cli.command(name="eval")(smdp.cli.commands.evaluate.evaluate)
cli_reproduce = cli.command(name="reproduce")(smdp.cli.commands.reproduce.reproduce)


def main():
    return sys.exit(cli())


if __name__ == "__main__":
    main()
