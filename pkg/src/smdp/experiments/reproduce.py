"""
This submodule reproduces the result tables of the method: every target
expands into a set of cells (a configuration and a run name), runs
``generate``, ``train`` and ``eval`` for every cell and every seed, and
emits the per-seed rows, a mean/std summary and a table laid out with one
line per cell. Each target then checks its acceptance thresholds.

Cell failures (diverged trainings, non-finite metrics) are recorded in the
report as ``failed`` rows instead of stopping the table.
"""

import math
import os
import typing

import loguru
import numpy as np

import smdp.autodiff.tensor
import smdp.exceptions
import smdp.experiments.manifest
import smdp.experiments.plots
import smdp.experiments.stages
import smdp.helpers.parallel
import smdp.inference.solver
import smdp.input.config
import smdp.metrics.reports
import smdp.physics.heat
import smdp.physics.toy
import smdp.sde.simulation
import smdp.training.plan


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "TARGET_LOSS_COMPARISON",
    "TARGET_HEAT_COMPARISON",
    "TARGET_ABLATION",
    "TARGET_GRID_ROBUSTNESS",
    "TARGET_SCORE_ERROR",
    "TARGET_CONVERGENCE",
    "TARGETS",
    "TARGET_EXPERIMENTS",
    "TARGET_ALIASES",

    "LOSS_COMPARISON_LOSSES",
    "LOSS_COMPARISON_FRACTIONS",
    "SCORE_ERROR_DTS",
    "CONVERGENCE_DTS",

    "Cell",
    "ReproduceResult",

    "resolve_target",
    "cells_for",
    "summary_table",
    "check_acceptance",
    "reproduce",
]


TARGET_LOSS_COMPARISON = "loss-comparison"
TARGET_HEAT_COMPARISON = "heat-comparison"
TARGET_ABLATION = "ablation"
TARGET_GRID_ROBUSTNESS = "grid-robustness"
TARGET_SCORE_ERROR = "score-error"
TARGET_CONVERGENCE = "convergence"

TARGETS: typing.List[str] = [
    TARGET_LOSS_COMPARISON,
    TARGET_HEAT_COMPARISON,
    TARGET_ABLATION,
    TARGET_GRID_ROBUSTNESS,
    TARGET_SCORE_ERROR,
    TARGET_CONVERGENCE,
]

TARGET_EXPERIMENTS: typing.Dict[str, str] = {
    TARGET_LOSS_COMPARISON: smdp.input.config.EXPERIMENT_TOY,
    TARGET_HEAT_COMPARISON: smdp.input.config.EXPERIMENT_HEAT,
    TARGET_ABLATION: smdp.input.config.EXPERIMENT_HEAT,
    TARGET_GRID_ROBUSTNESS: smdp.input.config.EXPERIMENT_TOY,
    TARGET_SCORE_ERROR: smdp.input.config.EXPERIMENT_AFFINE,
    TARGET_CONVERGENCE: smdp.input.config.EXPERIMENT_AFFINE,
}

# alternative target names, as typed on the command line
TARGET_ALIASES: typing.Dict[str, str] = {
    "table1": TARGET_LOSS_COMPARISON,
}

LOSS_COMPARISON_LOSSES: typing.List[str] = [
    smdp.training.plan.LOSS_MULTI_STEP,
    smdp.training.plan.LOSS_ONE_STEP,
    smdp.training.plan.LOSS_ISM,
    smdp.training.plan.LOSS_SSM_VR,
]

LOSS_COMPARISON_FRACTIONS: typing.List[float] = [1.0, 0.1, 0.01]

SCORE_ERROR_DTS: typing.List[float] = [0.1, 0.05, 0.025]

CONVERGENCE_DTS: typing.List[float] = [1 / 8, 1 / 16, 1 / 32, 1 / 64]

# acceptance thresholds
LOSS_COMPARISON_MIN_Q_ODE = 0.85
LOSS_COMPARISON_MIN_Q_SDE = 0.90
GRID_MIN_ESCAPE_ONE_STEP = 0.10
GRID_MAX_ESCAPE_MULTI_STEP = 0.02
SCORE_ERROR_MAX_RATIO = 0.1
HEAT_ROUNDTRIP_TOLERANCE = 1e-10
HEAT_SOLVER_ONLY_FACTOR = 5.0
ABLATION_MIN_IMPROVEMENT = 0.2
CONVERGENCE_SLOPE_RANGE = (0.35, 0.65)


logger = loguru.logger


class Cell(typing.NamedTuple):
    """One configuration of a table; cells sharing a group share their dataset."""

    name: str
    group: str
    config: smdp.input.config.ExperimentConfig


class ReproduceResult(typing.NamedTuple):
    target: str
    rows: typing.List[smdp.metrics.reports.MetricRow]
    summary: typing.List[smdp.metrics.reports.MetricRow]
    failures: typing.List[str]
    acceptance_failures: typing.List[str]
    artifacts: typing.List[str]

    @property
    def passed(self) -> bool:
        return len(self.acceptance_failures) == 0


def _fraction_name(fraction: float) -> str:
    return "f{:g}".format(fraction)


# =============================================================================
# cells


def resolve_target(name: str) -> str:
    """
    Returns the target named :py:data:`name` (case-insensitive, aliases
    of :py:data:`TARGET_ALIASES` included).

    :raises SmdpConfigError: on an unknown target
    """
    target = TARGET_ALIASES.get(name.lower(), name.lower())
    if target not in TARGETS:
        raise smdp.exceptions.SmdpConfigError("unknown target '{}', expected one of {}".format(name, TARGETS))
    return target


def cells_for(target: str, base: smdp.input.config.ExperimentConfig) -> typing.List[Cell]:
    """
    The cells of a target, built from :py:data:`base` (which must be a
    configuration of the target's experiment).

    :raises SmdpConfigError: on an unknown target or a mismatched experiment
    """
    target = resolve_target(target)
    if base.experiment != TARGET_EXPERIMENTS[target]:
        raise smdp.exceptions.SmdpConfigError(
            "target '{}' runs on '{}', got a '{}' configuration".format(
                target, TARGET_EXPERIMENTS[target], base.experiment))

    if target == TARGET_LOSS_COMPARISON:
        return [
            Cell(
                name="{}-{}".format(loss, _fraction_name(fraction)),
                group="data",
                config=base.replace({"train.loss": loss, "data.fraction": fraction}),
            )
            for loss in LOSS_COMPARISON_LOSSES
            for fraction in LOSS_COMPARISON_FRACTIONS
        ]

    if target == TARGET_HEAT_COMPARISON:
        return [
            Cell(name="smdp", group="data", config=base.replace({"train.reverse_physics": True})),
            Cell(name="score-only", group="data", config=base.replace({"train.reverse_physics": False})),
        ]

    if target == TARGET_ABLATION:
        plan = base.train_plan()
        s_max_values = [int(s) for s in base.eval_value("s_max_values", [2, 4, 8, 16, 32])]
        return [
            Cell(
                name="s-max-{}".format(s_max),
                group="data",
                config=base.replace({"train.phases": [p.to_dict() for p in plan.with_s_max(s_max).phases]}),
            )
            for s_max in s_max_values
        ]

    if target == TARGET_GRID_ROBUSTNESS:
        multi = base.replace({"model": {"kind": "grid"}, "train.loss": smdp.training.plan.LOSS_MULTI_STEP})
        multi = multi.replace({
            "train.phases": [p.to_dict() for p in multi.train_plan().with_s_max(10).phases],
        })
        return [
            Cell(
                name="grid-one-step",
                group="data",
                config=base.replace({"model": {"kind": "grid"}, "train.loss": smdp.training.plan.LOSS_ONE_STEP}),
            ),
            Cell(name="grid-multi-step", group="data", config=multi),
        ]

    if target == TARGET_SCORE_ERROR:
        grid = base.grid()
        horizon = grid.t_end - grid.t0
        return [
            Cell(
                name="one-step-dt{:g}".format(dt),
                group="dt-{:g}".format(dt),
                config=base.replace({
                    "data.dt": dt,
                    "data.steps": int(round(horizon / dt)),
                    "train.loss": smdp.training.plan.LOSS_ONE_STEP,
                }),
            )
            for dt in SCORE_ERROR_DTS
        ]

    # convergence needs no training
    return []


# =============================================================================
# running


def _run_cell(
        cell: Cell,
        force: bool,
        progress: bool,
) -> typing.Tuple[typing.List[smdp.metrics.reports.MetricRow], typing.Optional[str]]:
    label = "{}/{}".format(cell.config.experiment, cell.name)
    try:
        outcomes = smdp.experiments.stages.run_all(cell.config, run=cell.name, force=force, progress=progress)
        return outcomes[-1].rows, None

    except (smdp.exceptions.TrainingAbortedError, smdp.exceptions.NonFiniteError) as exc:
        logger.error("Cell '{}' (seed {}) failed: {}", cell.name, cell.config.seed, exc.message)
        return (
            [smdp.metrics.reports.MetricRow(label, "failed", 1.0)],
            "{} (seed {}): {}".format(cell.name, cell.config.seed, exc.message),
        )


def _convergence_rows(
        base: smdp.input.config.ExperimentConfig,
        seed: int,
) -> typing.List[smdp.metrics.reports.MetricRow]:
    system = smdp.physics.toy.MultiplicativeAffine1D(lam=float(base.section("system").get("lam", 0.5)), g=1.0)
    errors = smdp.sde.simulation.strong_convergence_errors(
        system.spec(), CONVERGENCE_DTS, x0=1.0, t_end=1.0, n_paths=1000, seed=seed)
    slope = float(np.polyfit(np.log(CONVERGENCE_DTS), np.log(errors), 1)[0])

    label = "{}/convergence".format(system.spec().name)
    logger.info("Euler-Maruyama strong order (seed {}): {:.3f}.", seed, slope)
    rows = [
        smdp.metrics.reports.MetricRow(label, "strong_error_dt{:g}".format(dt), float(err), 1000)
        for (dt, err) in zip(CONVERGENCE_DTS, errors)
    ]
    rows.append(smdp.metrics.reports.MetricRow(label, "strong_order", slope, len(CONVERGENCE_DTS)))
    return rows


def _heat_roundtrip_rows(
        base: smdp.input.config.ExperimentConfig,
        seed: int,
) -> typing.List[smdp.metrics.reports.MetricRow]:
    system = base.section("system")
    heat = smdp.physics.heat.HeatEquation2D(
        d=int(system.get("d", 32)),
        g=0.0,
        profile=system.get("profile", smdp.physics.heat.PROFILE_MIN_INDEX),
        alpha=system.get("alpha", 1.0),
        grf_exponent=system.get("grf_exponent", 4.0),
    )
    grid = base.grid()
    field = smdp.physics.heat.sample_grf(d=heat.d, n=heat.grf_exponent, seed=seed)
    x0 = smdp.autodiff.tensor.Tensor(field.flat()[None])

    x = x0
    for _ in range(grid.steps):
        x = heat.forward_solver(x, grid.dt)
    for _ in range(grid.steps):
        x = heat.reverse_solver(x, grid.dt)

    error = float(np.max(np.abs(x.numpy() - x0.numpy())))
    return [smdp.metrics.reports.MetricRow("heat-equation/roundtrip", "roundtrip_error", error, 1)]


def _seeded(cell: Cell, seed: int, out: str) -> Cell:
    return cell._replace(config=cell.config.replace({"seed": int(seed), "out": os.path.join(out, cell.group)}))


# =============================================================================
# reporting


def summary_table(summary: typing.Iterable[smdp.metrics.reports.MetricRow]) -> typing.List[typing.Dict[str, str]]:
    """
    One record per cell with a ``mean±std`` column per metric, the layout
    of the published tables.
    """
    records: typing.Dict[str, typing.Dict[str, str]] = dict()
    for row in summary:
        record = records.setdefault(row.experiment, {"run": row.experiment})
        if math.isfinite(row.value):
            record[row.metric] = "{:.4g}±{:.2g}".format(row.value, row.std if math.isfinite(row.std) else 0.0)
        else:
            record[row.metric] = "nan"
    return list(records.values())


def _lookup(
        summary: typing.Iterable[smdp.metrics.reports.MetricRow],
) -> typing.Dict[typing.Tuple[str, str], float]:
    return {(row.experiment, row.metric): row.value for row in summary}


def check_acceptance(
        target: str,
        summary: typing.Iterable[smdp.metrics.reports.MetricRow],
) -> typing.List[str]:
    """
    Checks the acceptance thresholds of a target against the aggregated
    rows; returns the failed checks (empty when all pass). A missing or
    non-finite value fails its check.
    """
    target = TARGET_ALIASES.get(target, target)
    values = _lookup(summary)
    failures: typing.List[str] = []

    def get(label: str, metric: str) -> float:
        value = values.get((label, metric), float("nan"))
        if not math.isfinite(value):
            failures.append("{} {} is missing".format(label, metric))
        return value

    def require(condition: bool, message: str) -> None:
        if not condition:
            failures.append(message)

    if target == TARGET_LOSS_COMPARISON:
        toy = smdp.input.config.EXPERIMENT_TOY
        multi = "{}/{}-f1".format(toy, smdp.training.plan.LOSS_MULTI_STEP)
        one = "{}/{}-f1".format(toy, smdp.training.plan.LOSS_ONE_STEP)
        ism = "{}/{}-f1".format(toy, smdp.training.plan.LOSS_ISM)
        q_multi_ode, q_multi_sde = get(multi, "q_ode"), get(multi, "q_sde")
        q_one_ode, q_ism_ode = get(one, "q_ode"), get(ism, "q_ode")
        require(q_multi_ode >= LOSS_COMPARISON_MIN_Q_ODE, "multi-step Q (ODE) {:.3f} < {}".format(q_multi_ode, LOSS_COMPARISON_MIN_Q_ODE))
        require(q_multi_sde >= LOSS_COMPARISON_MIN_Q_SDE, "multi-step Q (SDE) {:.3f} < {}".format(q_multi_sde, LOSS_COMPARISON_MIN_Q_SDE))
        require(q_multi_ode >= q_one_ode, "Q (ODE): multi-step {:.3f} < 1-step {:.3f}".format(q_multi_ode, q_one_ode))
        require(q_one_ode >= q_ism_ode, "Q (ODE): 1-step {:.3f} < ISM {:.3f}".format(q_one_ode, q_ism_ode))

    elif target == TARGET_HEAT_COMPARISON:
        smdp_label = "{}/smdp".format(smdp.input.config.EXPERIMENT_HEAT)
        roundtrip = get("heat-equation/roundtrip", "roundtrip_error")
        spectral_ode = get(smdp_label, "spectral_ode")
        spectral_sde = get(smdp_label, "spectral_sde")
        spectral_solver = get(smdp_label, "spectral_{}".format(smdp.experiments.stages.SOLVER_ONLY))
        mse_ode, mse_sde = get(smdp_label, "mse_ode"), get(smdp_label, "mse_sde")
        require(roundtrip < HEAT_ROUNDTRIP_TOLERANCE, "spectral round trip error {:.3g}".format(roundtrip))
        require(spectral_solver >= HEAT_SOLVER_ONLY_FACTOR * spectral_ode,
                "solver-only spectral loss {:.4g} < {} x SMDP-ODE {:.4g}".format(
                    spectral_solver, HEAT_SOLVER_ONLY_FACTOR, spectral_ode))
        require(spectral_sde < spectral_ode,
                "SMDP-SDE spectral loss {:.4g} >= SMDP-ODE {:.4g}".format(spectral_sde, spectral_ode))
        require(mse_ode <= mse_sde, "SMDP-ODE MSE {:.4g} > SMDP-SDE {:.4g}".format(mse_ode, mse_sde))

    elif target == TARGET_ABLATION:
        heat = smdp.input.config.EXPERIMENT_HEAT
        low, high = get("{}/s-max-2".format(heat), "mse_ode"), get("{}/s-max-16".format(heat), "mse_ode")
        require(high <= (1.0 - ABLATION_MIN_IMPROVEMENT) * low,
                "MSE at S_max=16 ({:.4g}) is not {:.0%} below S_max=2 ({:.4g})".format(
                    high, ABLATION_MIN_IMPROVEMENT, low))

    elif target == TARGET_GRID_ROBUSTNESS:
        toy = smdp.input.config.EXPERIMENT_TOY
        one = get("{}/grid-one-step".format(toy), "escape_ode")
        multi = get("{}/grid-multi-step".format(toy), "escape_ode")
        require(multi < one, "multi-step escapes {:.3f} not below 1-step {:.3f}".format(multi, one))
        if one < GRID_MIN_ESCAPE_ONE_STEP or multi > GRID_MAX_ESCAPE_MULTI_STEP:
            logger.warning(
                "GRID escape fractions 1-step {:.3f} / multi-step {:.3f} outside the expected {} / {}.",
                one, multi, GRID_MIN_ESCAPE_ONE_STEP, GRID_MAX_ESCAPE_MULTI_STEP)

    elif target == TARGET_SCORE_ERROR:
        affine = smdp.input.config.EXPERIMENT_AFFINE
        errors = []
        for dt in SCORE_ERROR_DTS:
            label = "{}/one-step-dt{:g}".format(affine, dt)
            ratio = get(label, "score_error_ratio")
            require(ratio < SCORE_ERROR_MAX_RATIO,
                    "score error at dt={} is {:.2%} of the zero model".format(dt, ratio))
            errors.append(get(label, "score_error"))
        require(all(a > b for (a, b) in zip(errors[:-1], errors[1:])),
                "score error does not decrease with dt: {}".format(["{:.3g}".format(e) for e in errors]))

    elif target == TARGET_CONVERGENCE:
        slope = get("multiplicative-affine-sde/convergence", "strong_order")
        low, high = CONVERGENCE_SLOPE_RANGE
        require(low <= slope <= high, "strong order {:.3f} outside [{}, {}]".format(slope, low, high))

    return failures


def _figures(
        target: str,
        summary: typing.List[smdp.metrics.reports.MetricRow],
        directory: str,
) -> typing.List[str]:
    values = _lookup(summary)

    if target == TARGET_ABLATION:
        heat = smdp.input.config.EXPERIMENT_HEAT
        s_values = sorted({
            int(row.experiment.rsplit("-", 1)[-1]) for row in summary
            if row.experiment.startswith("{}/s-max-".format(heat))
        })
        series = {
            mode: (s_values, [values.get(("{}/s-max-{}".format(heat, s), "mse_{}".format(mode)), float("nan"))
                              for s in s_values])
            for mode in smdp.inference.solver.MODES
            if any(("{}/s-max-{}".format(heat, s), "mse_{}".format(mode)) in values for s in s_values)
        }
        svg = smdp.experiments.plots.line_chart_svg(
            series, title="reconstruction MSE against S_max", x_label="S_max", y_label="log10 MSE", log_y=True)
        return [smdp.experiments.plots.write_svg(os.path.join(directory, "ablation.svg"), svg)]

    if target == TARGET_SCORE_ERROR:
        affine = smdp.input.config.EXPERIMENT_AFFINE
        svg = smdp.experiments.plots.line_chart_svg(
            {"1-step": (SCORE_ERROR_DTS, [
                values.get(("{}/one-step-dt{:g}".format(affine, dt), "score_error"), float("nan"))
                for dt in SCORE_ERROR_DTS
            ])},
            title="score error against dt", x_label="dt", y_label="log10 error", log_y=True)
        return [smdp.experiments.plots.write_svg(os.path.join(directory, "score-error.svg"), svg)]

    return []


def reproduce(
        target: str,
        base: smdp.input.config.ExperimentConfig,
        force: bool = False,
        progress: bool = False,
        workers: int = 1,
        check: bool = True,
) -> ReproduceResult:
    """
    Runs every cell of :py:data:`target` over the seeds of :py:data:`base`
    and writes ``<out>/reproduce/<target>/{runs,summary,table}.csv``.
    Cells of different dataset groups or seeds run concurrently on up to
    :py:data:`workers` threads. Completed stages are skipped.

    :raises AcceptanceError: if :py:data:`check` is set and a threshold is
        missed (the reports are written first)
    """
    target = resolve_target(target)
    directory = os.path.join(base.out, "reproduce", target)
    manifest = smdp.experiments.manifest.RunManifest(directory)
    started_at = smdp.experiments.manifest.utc_timestamp()
    seeds = base.seeds

    logger.info("Reproducing '{}' over seeds {} into '{}'.", target, seeds, directory)

    rows: typing.List[smdp.metrics.reports.MetricRow] = []
    failures: typing.List[str] = []

    if target == TARGET_CONVERGENCE:
        for seed in seeds:
            rows += _convergence_rows(base, seed)

    else:
        cells = cells_for(target, base)
        logger.info("Target '{}' has {} cells.", target, len(cells))

        # cells sharing a dataset and a seed run one after the other
        buckets: typing.Dict[typing.Tuple[str, int], typing.List[Cell]] = dict()
        for seed in seeds:
            for cell in cells:
                buckets.setdefault((cell.group, seed), []).append(_seeded(cell, seed, directory))

        def _run_bucket(bucket: typing.List[Cell]):
            return [_run_cell(cell, force=force, progress=progress) for cell in bucket]

        for results in smdp.helpers.parallel.parallel_map(_run_bucket, list(buckets.values()), workers=workers):
            for (cell_rows, failure) in results:
                rows += cell_rows
                if failure is not None:
                    failures.append(failure)

        if target == TARGET_HEAT_COMPARISON:
            for seed in seeds:
                rows += _heat_roundtrip_rows(base, seed)

    summary = smdp.metrics.reports.aggregate(rows)
    artifacts = [
        smdp.metrics.reports.write_report(os.path.join(directory, "runs.csv"), rows),
        smdp.metrics.reports.write_report(os.path.join(directory, "summary.csv"), summary),
        smdp.metrics.reports.write_csv(os.path.join(directory, "table.csv"), summary_table(summary)),
    ]
    artifacts += _figures(target, summary, directory)

    acceptance_failures = check_acceptance(target, summary)
    manifest.record(
        "reproduce/{}".format(target), base.config_hash(smdp.input.config.STAGE_EVAL), artifacts, started_at)

    for failure in failures:
        logger.warning("Failed cell: {}", failure)
    for failure in acceptance_failures:
        logger.warning("Acceptance check failed: {}", failure)

    result = ReproduceResult(
        target=target,
        rows=rows,
        summary=summary,
        failures=failures,
        acceptance_failures=acceptance_failures,
        artifacts=artifacts,
    )

    if check and acceptance_failures:
        raise smdp.exceptions.AcceptanceError(
            "target '{}' missed {} acceptance check(s): {}".format(
                target, len(acceptance_failures), "; ".join(acceptance_failures)),
            failures=acceptance_failures,
        )

    return result
