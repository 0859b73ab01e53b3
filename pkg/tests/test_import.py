
def test_import_all():

    import smdp
    import smdp.autodiff.gradcheck
    import smdp.autodiff.tensor
    import smdp.autodiff
    import smdp.cli.commands.evaluate
    import smdp.cli.commands.generate
    import smdp.cli.commands.reproduce
    import smdp.cli.commands.train
    import smdp.cli.helpers
    import smdp.cli.logo
    import smdp.cli
    import smdp.exceptions
    import smdp.experiments.manifest
    import smdp.experiments.plots
    import smdp.experiments.reproduce
    import smdp.experiments.stages
    import smdp.experiments
    import smdp.helpers.dict_serializer
    import smdp.helpers.parallel
    import smdp.helpers
    import smdp.inference.langevin
    import smdp.inference.solver
    import smdp.inference
    import smdp.input.config
    import smdp.input.parsing
    import smdp.input
    import smdp.metrics.posterior
    import smdp.metrics.reconstruction
    import smdp.metrics.reports
    import smdp.metrics.score_field
    import smdp.metrics.spectrum
    import smdp.metrics
    import smdp.models.base
    import smdp.models.checkpoint
    import smdp.models.conv
    import smdp.models.grid
    import smdp.models.mlp
    import smdp.models
    import smdp.physics.heat
    import smdp.physics.toy
    import smdp.physics
    import smdp.sde.retry
    import smdp.sde.simulation
    import smdp.sde.storage
    import smdp.sde
    import smdp.training.losses
    import smdp.training.loop
    import smdp.training.optimizer
    import smdp.training.plan
    import smdp.training

    assert True


def test_version():
    import smdp.__version__
    assert smdp.__version__.__version__ == "0.1.0"
