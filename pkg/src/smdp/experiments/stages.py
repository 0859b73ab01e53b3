"""
This submodule implements the three stages of an experiment run,
``generate``, ``train`` and ``eval``. Each stage reads the artifacts of the
previous one from the run directory, writes its own, and records them in
the run manifest under its configuration hash, so that a rerun with the
same configuration is a no-op.

A run directory is ``<out>/<experiment>/seed-<seed>``; it holds one dataset
and any number of named training runs (one subdirectory per run name).
"""

import os
import typing

import loguru
import numpy as np

import smdp.exceptions
import smdp.experiments.manifest
import smdp.experiments.plots
import smdp.helpers.parallel
import smdp.inference.langevin
import smdp.inference.solver
import smdp.input.config
import smdp.metrics.posterior
import smdp.metrics.reconstruction
import smdp.metrics.reports
import smdp.metrics.score_field
import smdp.metrics.spectrum
import smdp.models.base
import smdp.models.checkpoint
import smdp.physics.toy
import smdp.sde.simulation
import smdp.sde.storage
import smdp.training.loop


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "DEFAULT_RUN",
    "SOLVER_ONLY",

    "RunLayout",
    "StageOutcome",

    "test_seed",
    "generate",
    "train",
    "evaluate",
    "run_all",
]


DEFAULT_RUN = "main"

SOLVER_ONLY = "solver-only"


logger = loguru.logger


class RunLayout(typing.NamedTuple):
    root: str

    @classmethod
    def for_config(cls, config: smdp.input.config.ExperimentConfig) -> "RunLayout":
        return cls(root=os.path.join(config.out, config.experiment, "seed-{}".format(config.seed)))

    @property
    def dataset(self) -> str:
        return os.path.join(self.root, "dataset.smdp")

    def run_dir(self, run: str) -> str:
        return os.path.join(self.root, run)

    def checkpoint(self, run: str) -> str:
        return os.path.join(self.root, run, "checkpoint.bin")

    def history(self, run: str) -> str:
        return os.path.join(self.root, run, "history.csv")

    def metrics(self, run: str) -> str:
        return os.path.join(self.root, run, "metrics.csv")

    def test_set(self, run: str) -> str:
        return os.path.join(self.root, run, "test.smdp")

    def manifest(self) -> smdp.experiments.manifest.RunManifest:
        return smdp.experiments.manifest.RunManifest(self.root)


class StageOutcome(typing.NamedTuple):
    stage: str
    key: str
    config_hash: str
    skipped: bool
    artifacts: typing.List[str]
    rows: typing.List[smdp.metrics.reports.MetricRow] = []


def _stage_key(stage: str, run: typing.Optional[str] = None) -> str:
    return stage if run is None else "{}/{}".format(stage, run)


def test_seed(seed: int) -> int:
    """Seed of the held-out test trajectories, derived from (and distinct from) the run seed."""
    return int(np.random.SeedSequence([int(seed), 0x7e57]).generate_state(1)[0])


def _require_stage(
        manifest: smdp.experiments.manifest.RunManifest,
        key: str,
        config_hash: str,
        command: str,
) -> None:
    record = manifest.get(key)
    if record is None:
        raise smdp.exceptions.MissingArtifactError(
            "'{}' has no completed '{}' stage; run `smdp {}` first".format(manifest.root, key, command))
    if record.config_hash != config_hash or not manifest.is_complete(key, config_hash):
        raise smdp.exceptions.MissingArtifactError(
            "stage '{}' in '{}' does not match the current configuration; rerun `smdp {}`".format(
                key, manifest.root, command))


# =============================================================================
# generate


def generate(
        config: smdp.input.config.ExperimentConfig,
        force: bool = False,
        progress: bool = False,
) -> StageOutcome:
    """
    Samples the training trajectories of the experiment.

    :raises ArtifactConflictError: if the run directory holds a dataset of
        another configuration and :py:data:`force` is not set
    """
    layout = RunLayout.for_config(config)
    manifest = layout.manifest()
    key = _stage_key(smdp.input.config.STAGE_GENERATE)
    config_hash = config.config_hash(smdp.input.config.STAGE_GENERATE)

    if manifest.is_complete(key, config_hash) and not force:
        logger.info("Dataset '{}' is up to date (hash {}), skipping.", layout.dataset, config_hash[:12])
        return StageOutcome("generate", key, config_hash, True, [layout.dataset])
    manifest.check_conflict(key, config_hash, force=force)

    started_at = smdp.experiments.manifest.utc_timestamp()
    spec, sampler = config.system()
    data = config.section("data")

    trajectories = smdp.sde.simulation.generate_dataset(
        spec=spec,
        p0_sampler=sampler,
        n=int(data["n"]),
        grid=config.grid(),
        seed=config.seed,
        chunk_size=int(data.get("chunk_size", 500)),
        progress=progress,
    )
    smdp.sde.storage.write_trajectories(layout.dataset, trajectories)

    artifacts = [layout.dataset, smdp.sde.storage.sidecar_path(layout.dataset)]
    manifest.record(key, config_hash, artifacts, started_at)
    logger.info("Wrote dataset '{}' ({} trajectories).", layout.dataset, trajectories.n)
    return StageOutcome("generate", key, config_hash, False, artifacts)


# =============================================================================
# train


def train(
        config: smdp.input.config.ExperimentConfig,
        run: str = DEFAULT_RUN,
        force: bool = False,
        progress: bool = False,
) -> StageOutcome:
    """
    Trains a model on the (prefix of the) dataset and writes its
    checkpoint and loss history.

    :raises MissingArtifactError: if the dataset is missing or stale
    :raises TrainingAbortedError: if the training diverges
    """
    layout = RunLayout.for_config(config)
    manifest = layout.manifest()
    key = _stage_key(smdp.input.config.STAGE_TRAIN, run)
    config_hash = config.config_hash(smdp.input.config.STAGE_TRAIN)
    artifacts = [layout.checkpoint(run), layout.history(run)]

    if manifest.is_complete(key, config_hash) and not force:
        logger.info("Checkpoint '{}' is up to date (hash {}), skipping.", layout.checkpoint(run), config_hash[:12])
        return StageOutcome("train", key, config_hash, True, artifacts)
    manifest.check_conflict(key, config_hash, force=force)
    _require_stage(
        manifest, smdp.input.config.STAGE_GENERATE,
        config.config_hash(smdp.input.config.STAGE_GENERATE), "generate")

    started_at = smdp.experiments.manifest.utc_timestamp()
    dataset = smdp.sde.storage.read_trajectories(layout.dataset).fraction(config.fraction)
    logger.info("Training on {} trajectories ({:.0%} of the dataset).", dataset.n, config.fraction)

    spec, _ = config.system()
    result = smdp.training.loop.run_training(
        plan=config.train_plan(),
        model=config.model(),
        spec=spec,
        dataset=dataset,
        workers=smdp.helpers.parallel.worker_count(config.workers),
        progress=progress,
    )

    smdp.models.checkpoint.save_checkpoint(layout.checkpoint(run), result.model)
    smdp.training.loop.write_history(layout.history(run), result.history)

    if result.history:
        epochs = [row["epoch"] for row in result.history]
        figure = os.path.join(layout.run_dir(run), "history.svg")
        smdp.experiments.plots.write_svg(figure, smdp.experiments.plots.line_chart_svg(
            {
                "train loss": (epochs, [row["train_loss"] for row in result.history]),
                "floor": (epochs, [row["loss_floor"] for row in result.history]),
            },
            title="{} ({})".format(config.experiment, config.loss),
            x_label="epoch",
            y_label="log10 loss",
            log_y=True,
        ))
        artifacts.append(figure)

    manifest.record(key, config_hash, artifacts, started_at)
    return StageOutcome("train", key, config_hash, False, artifacts)


# =============================================================================
# eval


def _label(config: smdp.input.config.ExperimentConfig, run: str) -> str:
    return "{}/{}".format(config.experiment, run)


def _solver_spec(
        config: smdp.input.config.ExperimentConfig,
        spec: smdp.sde.simulation.SdeSpec,
) -> smdp.sde.simulation.SdeSpec:
    # models trained without the reverse simulator also run without it
    if not config.train_plan().reverse_physics:
        return spec.without_reverse_physics()
    return spec


def _evaluate_toy(
        config: smdp.input.config.ExperimentConfig,
        model: smdp.models.base.ScoreModel,
        layout: RunLayout,
        run: str,
        workers: int,
) -> typing.Tuple[typing.List[smdp.metrics.reports.MetricRow], typing.List[str]]:
    spec = _solver_spec(config, config.system(evaluation=True)[0])
    label = _label(config, run)
    count = int(config.inference_value("n_trajectories", 1000))
    tolerance = float(config.eval_value("tolerance", smdp.metrics.posterior.DEFAULT_TOLERANCE))
    bound = float(config.eval_value("escape_bound", 1.25))
    x_end = config.sample_x_end(count)

    rows = []
    artifacts = []
    for mode in config.inference_modes:
        inference = config.inference_config(mode)
        batch = smdp.inference.solver.solve_inverse_batch(model, spec, x_end, inference, workers=workers)

        report = smdp.metrics.posterior.posterior_metric_q(
            batch.endpoints[:, 0], tolerance=tolerance, diverged=batch.diverged)
        with np.errstate(invalid="ignore"):
            escaped = batch.diverged | np.any(~(np.abs(batch.trajectories) <= bound), axis=(1, 2))

        logger.info(
            "{} {}: Q={:.3f} (rho-={:.3f}, rho+={:.3f}), {:.1%} escaped [-{}, {}].",
            label, mode, report.q, report.rho_minus, report.rho_plus, float(np.mean(escaped)), bound, bound)

        rows += [
            smdp.metrics.reports.MetricRow(label, "q_{}".format(mode), report.q, report.n),
            smdp.metrics.reports.MetricRow(label, "rho_minus_{}".format(mode), report.rho_minus, report.n),
            smdp.metrics.reports.MetricRow(label, "rho_plus_{}".format(mode), report.rho_plus, report.n),
            smdp.metrics.reports.MetricRow(label, "escape_{}".format(mode), float(np.mean(escaped)), report.n),
            smdp.metrics.reports.MetricRow(label, "diverged_{}".format(mode), float(np.mean(batch.diverged)), report.n),
        ]

        run_dir = layout.run_dir(run)
        artifacts.append(smdp.inference.solver.write_inference(
            os.path.join(run_dir, "inference-{}.smdp".format(mode)), batch, inference, spec_name=spec.name))
        artifacts.append(smdp.inference.solver.write_diagnostics(
            os.path.join(run_dir, "diagnostics-{}.csv".format(mode)), batch.result(0)))

    grid = config.grid()
    times = np.linspace(grid.t0 + grid.dt, grid.t_end, 50)
    xs = np.linspace(-bound, bound, 60)
    field = smdp.metrics.score_field.score_field_grid(model, times, xs)
    figure = os.path.join(layout.run_dir(run), "score-field.svg")
    artifacts.append(smdp.experiments.plots.write_svg(figure, smdp.experiments.plots.heatmap_svg(
        field, x_extent=(-bound, bound), y_extent=(float(times[0]), float(times[-1])),
        title="learned correction ({})".format(run),
    )))

    return rows, artifacts


def _held_out(
        config: smdp.input.config.ExperimentConfig,
        spec: smdp.sde.simulation.SdeSpec,
        sampler: smdp.sde.simulation.Sampler,
        path: str,
        progress: bool,
) -> smdp.sde.simulation.TrajectorySet:
    test = smdp.sde.simulation.generate_dataset(
        spec=spec,
        p0_sampler=sampler,
        n=config.test_n,
        grid=config.grid(),
        seed=test_seed(config.seed),
        chunk_size=int(config.section("data").get("chunk_size", 500)),
        progress=progress,
    )
    smdp.sde.storage.write_trajectories(path, test)
    return test


def _evaluate_affine(
        config: smdp.input.config.ExperimentConfig,
        model: smdp.models.base.ScoreModel,
        layout: RunLayout,
        run: str,
        progress: bool,
) -> typing.Tuple[typing.List[smdp.metrics.reports.MetricRow], typing.List[str]]:
    spec, sampler = config.system(evaluation=True)
    system = smdp.physics.toy.AffineDrift1D(lam=spec.params["lambda"], g=spec.params["g"])
    label = _label(config, run)
    grid = config.grid()

    t = float(config.eval_value("score_time", 1.0))
    m = int(round((t - grid.t0) / grid.dt))
    if not 1 <= m <= grid.steps or not np.isclose(grid.time(m), t):
        raise smdp.exceptions.SmdpConfigError(
            "eval.score_time={} is not a positive time of the grid (dt={}, steps={})".format(t, grid.dt, grid.steps))

    test = _held_out(config, spec, sampler, layout.test_set(run), progress)
    samples = test.states[:, m]

    def analytic(x: np.ndarray, tt: float) -> np.ndarray:
        return smdp.physics.toy.analytic_score_affine(system, x, tt)

    error = smdp.metrics.score_field.score_field_error(model, analytic, samples, t, system.g)
    baseline = smdp.metrics.score_field.score_field_error(
        smdp.models.base.ZeroScore(dim=1), analytic, samples, t, system.g)
    logger.info("{}: score error {:.4g} at t={} ({:.2%} of the zero model).", label, error, t, error / baseline)

    rows = [
        smdp.metrics.reports.MetricRow(label, "score_error", error, samples.shape[0]),
        smdp.metrics.reports.MetricRow(label, "score_error_zero", baseline, samples.shape[0]),
        smdp.metrics.reports.MetricRow(label, "score_error_ratio", error / baseline, samples.shape[0]),
    ]

    n_steps = int(config.inference_value("langevin_steps", 0))
    if n_steps > 0:
        reference = system.mixture_variance(t)
        rows.append(smdp.metrics.reports.MetricRow(label, "analytic_variance", reference, 1))
        rows += _langevin_rows(config, model, samples, t, system.g, reference, label, "", progress)

        if config.inference_value("langevin_analytic", False):
            # grad log p itself, so no rescaling by g^2
            exact = smdp.models.base.AnalyticScore(lambda x, tt: analytic(x, float(tt[0, 0])), dim=1)
            rows += _langevin_rows(config, exact, samples, t, None, reference, label, "_analytic", progress)

    return rows, [layout.test_set(run)]


def _langevin_rows(
        config: smdp.input.config.ExperimentConfig,
        model: smdp.models.base.ScoreModel,
        samples: np.ndarray,
        t: float,
        diffusion: typing.Optional[float],
        reference: float,
        label: str,
        suffix: str,
        progress: bool,
) -> typing.List[smdp.metrics.reports.MetricRow]:
    refined = smdp.inference.langevin.langevin_refine(
        model, samples, t,
        epsilon=float(config.inference_value("langevin_epsilon", smdp.inference.langevin.DEFAULT_EPSILON)),
        n_steps=int(config.inference_value("langevin_steps", 0)),
        seed=config.seed,
        diffusion=diffusion,
        progress=progress,
    )
    kept = refined.states[~refined.diverged]
    variance = float(np.var(kept)) if kept.size else float("nan")
    logger.info("{}: Langevin{} variance {:.4g} (analytic {:.4g}).", label, suffix.replace("_", " "), variance, reference)
    return [
        smdp.metrics.reports.MetricRow(label, "langevin_variance" + suffix, variance, kept.shape[0]),
        smdp.metrics.reports.MetricRow(
            label, "langevin_variance_error" + suffix, abs(variance - reference) / reference, kept.shape[0]),
    ]


def _evaluate_heat(
        config: smdp.input.config.ExperimentConfig,
        model: smdp.models.base.ScoreModel,
        layout: RunLayout,
        run: str,
        workers: int,
        progress: bool,
) -> typing.Tuple[typing.List[smdp.metrics.reports.MetricRow], typing.List[str]]:
    spec, sampler = config.system(evaluation=True)
    label = _label(config, run)
    grid = config.grid()

    test = _held_out(config, spec, sampler, layout.test_set(run), progress)
    solver_spec = _solver_spec(config, spec)
    x0_ref = test.initial_states
    x_end = test.end_states
    reference = smdp.metrics.spectrum.mean_radial_spectrum(x0_ref)

    solvers = [(mode, model, config.inference_config(mode)) for mode in config.inference_modes]
    if config.train_plan().reverse_physics:
        solvers.append((
            SOLVER_ONLY,
            smdp.models.base.ZeroScore(dim=spec.dim),
            config.inference_config(smdp.inference.solver.MODE_ODE),
        ))

    rows = []
    first_estimates = []
    for (name, solver_model, inference) in solvers:
        batch = smdp.inference.solver.solve_inverse_batch(
            solver_model, solver_spec, x_end, inference, workers=workers)
        ok = ~batch.diverged
        if np.any(ok):
            x0_hat = batch.endpoints[ok]
            mse = smdp.metrics.reconstruction.reconstruction_mse(x0_hat, x_end[ok], spec, grid)
            spectral = smdp.metrics.spectrum.spectral_loss(
                smdp.metrics.spectrum.mean_radial_spectrum(x0_hat), reference)
        else:
            mse = spectral = float("nan")

        logger.info("{} {}: reconstruction MSE {:.4g}, spectral loss {:.4g}.", label, name, mse, spectral)
        rows += [
            smdp.metrics.reports.MetricRow(label, "mse_{}".format(name), mse, int(np.sum(ok))),
            smdp.metrics.reports.MetricRow(label, "spectral_{}".format(name), spectral, int(np.sum(ok))),
            smdp.metrics.reports.MetricRow(
                label, "diverged_{}".format(name), float(np.mean(batch.diverged)), len(batch)),
        ]
        first_estimates.append((name, batch.endpoints[0]))

    d = int(round(np.sqrt(spec.dim)))
    artifacts = [layout.test_set(run)]

    images = [x0_ref[0].reshape(d, d), x_end[0].reshape(d, d)] + [x.reshape(d, d) for (_, x) in first_estimates]
    labels = ["x0", "xT"] + [name for (name, _) in first_estimates]
    figure = os.path.join(layout.run_dir(run), "reconstructions.svg")
    artifacts.append(smdp.experiments.plots.write_svg(figure, smdp.experiments.plots.image_grid_svg(
        images, labels=labels, columns=len(images), title="reconstructions ({})".format(run))))

    n_samples = int(config.inference_value("n_samples", 0))
    if n_samples > 0 and smdp.inference.solver.MODE_SDE in config.inference_modes:
        samples = smdp.inference.solver.posterior_sample(
            model, solver_spec, x_end[0],
            config.inference_config(smdp.inference.solver.MODE_SDE), n_samples, workers=workers)
        figure = os.path.join(layout.run_dir(run), "posterior-samples.svg")
        artifacts.append(smdp.experiments.plots.write_svg(figure, smdp.experiments.plots.image_grid_svg(
            [s.endpoint.reshape(d, d) for s in samples],
            labels=["sample {}".format(i) for i in range(len(samples))],
            columns=5,
            title="posterior samples ({})".format(run),
        )))

    return rows, artifacts


def evaluate(
        config: smdp.input.config.ExperimentConfig,
        run: str = DEFAULT_RUN,
        force: bool = False,
        progress: bool = False,
) -> StageOutcome:
    """
    Runs inference with a trained checkpoint and computes the metrics of
    the experiment; writes ``metrics.csv`` and the figures.

    :raises MissingArtifactError: if the checkpoint is missing or stale
    """
    layout = RunLayout.for_config(config)
    manifest = layout.manifest()
    key = _stage_key(smdp.input.config.STAGE_EVAL, run)
    config_hash = config.config_hash(smdp.input.config.STAGE_EVAL)

    if manifest.is_complete(key, config_hash) and not force:
        logger.info("Metrics '{}' are up to date (hash {}), skipping.", layout.metrics(run), config_hash[:12])
        artifacts = [manifest.artifact_path(name) for name in manifest.get(key).artifacts]
        return StageOutcome(
            "eval", key, config_hash, True, artifacts, smdp.metrics.reports.read_report(layout.metrics(run)))
    manifest.check_conflict(key, config_hash, force=force)
    _require_stage(
        manifest, _stage_key(smdp.input.config.STAGE_TRAIN, run),
        config.config_hash(smdp.input.config.STAGE_TRAIN), "train")

    started_at = smdp.experiments.manifest.utc_timestamp()
    model = smdp.models.checkpoint.load_checkpoint(layout.checkpoint(run))
    workers = smdp.helpers.parallel.worker_count(config.workers)

    if config.experiment == smdp.input.config.EXPERIMENT_TOY:
        rows, artifacts = _evaluate_toy(config, model, layout, run, workers)
    elif config.experiment == smdp.input.config.EXPERIMENT_AFFINE:
        rows, artifacts = _evaluate_affine(config, model, layout, run, progress)
    else:
        rows, artifacts = _evaluate_heat(config, model, layout, run, workers, progress)

    artifacts.append(smdp.metrics.reports.write_report(layout.metrics(run), rows))
    manifest.record(key, config_hash, artifacts, started_at)
    return StageOutcome("eval", key, config_hash, False, artifacts, rows)


def run_all(
        config: smdp.input.config.ExperimentConfig,
        run: str = DEFAULT_RUN,
        force: bool = False,
        progress: bool = False,
) -> typing.List[StageOutcome]:
    """Runs ``generate``, ``train`` and ``eval`` in order, skipping completed stages."""
    return [
        generate(config, force=force, progress=progress),
        train(config, run=run, force=force, progress=progress),
        evaluate(config, run=run, force=force, progress=progress),
    ]
