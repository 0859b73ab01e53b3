import json
import os

import numpy as np
import pytest

import smdp.exceptions
import smdp.experiments.manifest
import smdp.experiments.plots
import smdp.experiments.reproduce
import smdp.experiments.stages
import smdp.input.config
import smdp.metrics.reports
import smdp.physics.toy

Config = smdp.input.config.ExperimentConfig
Row = smdp.metrics.reports.MetricRow
Reproduce = smdp.experiments.reproduce

ONE_EPOCH = "train.phases=[{epochs: 1, lr: 0.001, batch_size: 32, stride: 1}]"


def toy_config(out, *overrides):
    return Config.from_sources(experiment="toy-sde", out=str(out), overrides=[
        "data.n=12", "data.steps=10", "data.test_n=6", "inference.n_trajectories=6", "model.widths=[4]",
        "train.loss=one-step", ONE_EPOCH,
    ] + list(overrides))


# manifest


def test_manifest_records_and_reloads(tmp_path):
    manifest = smdp.experiments.manifest.RunManifest(str(tmp_path))
    artifact = tmp_path / "data.bin"
    artifact.write_bytes(b"x")

    record = manifest.record("generate", "abc", [str(artifact)], started_at="then")
    assert record.artifacts == ["data.bin"]
    assert manifest.is_complete("generate", "abc")
    assert not manifest.is_complete("generate", "def")
    assert not manifest.is_complete("train/main", "abc")

    reloaded = smdp.experiments.manifest.RunManifest(str(tmp_path))
    assert reloaded.get("generate").config_hash == "abc"
    with open(reloaded.path) as f:
        assert "generate" in json.load(f)["stages"]


def test_manifest_notices_missing_artifacts(tmp_path):
    manifest = smdp.experiments.manifest.RunManifest(str(tmp_path))
    artifact = tmp_path / "data.bin"
    artifact.write_bytes(b"x")
    manifest.record("generate", "abc", [str(artifact)], started_at="then")
    os.remove(str(artifact))
    assert not manifest.is_complete("generate", "abc")


def test_manifest_conflicts(tmp_path):
    manifest = smdp.experiments.manifest.RunManifest(str(tmp_path))
    manifest.record("generate", "abc", [], started_at="then")
    manifest.check_conflict("generate", "abc")
    manifest.check_conflict("train/main", "xyz")
    manifest.check_conflict("generate", "xyz", force=True)
    with pytest.raises(smdp.exceptions.ArtifactConflictError) as exc_info:
        manifest.check_conflict("generate", "xyz")
    assert exc_info.value.exit_code == smdp.exceptions.EXIT_CONFIG_ERROR


def test_corrupted_manifest(tmp_path):
    (tmp_path / smdp.experiments.manifest.MANIFEST_FILENAME).write_text("{not json")
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.experiments.manifest.RunManifest(str(tmp_path))


# stages


def test_run_layout(tmp_path):
    layout = smdp.experiments.stages.RunLayout.for_config(toy_config(tmp_path, "seed=3"))
    assert layout.root == os.path.join(str(tmp_path), "toy-sde", "seed-3")
    assert layout.checkpoint("main") == os.path.join(layout.root, "main", "checkpoint.bin")


def test_held_out_seed_differs_from_run_seed():
    seeds = {smdp.experiments.stages.test_seed(s) for s in range(5)}
    assert len(seeds) == 5
    assert smdp.experiments.stages.test_seed(0) != 0
    assert smdp.experiments.stages.test_seed(1) == smdp.experiments.stages.test_seed(1)


@pytest.mark.slow
def test_toy_stages_are_idempotent(tmp_path):
    config = toy_config(tmp_path)
    outcomes = smdp.experiments.stages.run_all(config)
    assert [o.key for o in outcomes] == ["generate", "train/main", "eval/main"]
    assert not any(o.skipped for o in outcomes)
    for outcome in outcomes:
        assert all(os.path.exists(path) for path in outcome.artifacts)

    metrics = {row.metric for row in outcomes[-1].rows}
    assert {"q_ode", "q_sde", "escape_ode", "diverged_sde"} <= metrics

    again = smdp.experiments.stages.run_all(config)
    assert all(o.skipped for o in again)
    assert [row.metric for row in again[-1].rows] == [row.metric for row in outcomes[-1].rows]


def test_stages_need_their_predecessors(tmp_path):
    config = toy_config(tmp_path)
    with pytest.raises(smdp.exceptions.MissingArtifactError):
        smdp.experiments.stages.train(config)
    smdp.experiments.stages.generate(config)
    with pytest.raises(smdp.exceptions.MissingArtifactError):
        smdp.experiments.stages.evaluate(config)


def test_stale_training_blocks_evaluation(tmp_path):
    config = toy_config(tmp_path)
    smdp.experiments.stages.generate(config)
    smdp.experiments.stages.train(config)
    with pytest.raises(smdp.exceptions.MissingArtifactError):
        smdp.experiments.stages.evaluate(config.replace({"train.jitter": True}))


def test_generate_refuses_to_overwrite_another_configuration(tmp_path):
    config = toy_config(tmp_path)
    smdp.experiments.stages.generate(config)
    other = config.replace({"data.n": 14})
    with pytest.raises(smdp.exceptions.ArtifactConflictError):
        smdp.experiments.stages.generate(other)
    outcome = smdp.experiments.stages.generate(other, force=True)
    assert not outcome.skipped


def test_named_runs_share_the_dataset(tmp_path):
    config = toy_config(tmp_path)
    smdp.experiments.stages.generate(config)
    first = smdp.experiments.stages.train(config, run="a")
    second = smdp.experiments.stages.train(config.replace({"train.jitter": True}), run="b")
    assert first.key == "train/a" and second.key == "train/b"
    layout = smdp.experiments.stages.RunLayout.for_config(config)
    assert os.path.exists(layout.checkpoint("a")) and os.path.exists(layout.checkpoint("b"))


@pytest.mark.slow
def test_affine_evaluation(tmp_path):
    config = Config.from_sources(experiment="affine-sde", out=str(tmp_path), overrides=[
        "data.n=12", "data.steps=20", "data.test_n=30", "model.widths=[4]",
        "inference.langevin_steps=5", ONE_EPOCH,
    ])
    outcome = smdp.experiments.stages.run_all(config)[-1]
    values = {row.metric: row.value for row in outcome.rows}
    assert values["score_error_zero"] > 0
    assert values["score_error_ratio"] == pytest.approx(values["score_error"] / values["score_error_zero"])
    assert values["analytic_variance"] == pytest.approx(
        smdp.physics.toy.AffineDrift1D(0.5, 0.04).mixture_variance(1.0))
    assert "langevin_variance" in values
    assert "langevin_variance_analytic" in values
    assert values["langevin_variance_error_analytic"] >= 0.0

    quiet = config.replace({"inference.langevin_analytic": False})
    outcome = smdp.experiments.stages.evaluate(quiet, force=True)
    assert "langevin_variance_analytic" not in {row.metric for row in outcome.rows}


def test_affine_score_time_must_be_on_the_grid(tmp_path):
    config = Config.from_sources(experiment="affine-sde", out=str(tmp_path), overrides=[
        "data.n=4", "data.steps=4", "model.widths=[4]", "inference.langevin_steps=0", ONE_EPOCH,
    ])
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.experiments.stages.run_all(config)


@pytest.mark.slow
def test_heat_evaluation(tmp_path):
    config = Config.from_sources(experiment="heat-equation", out=str(tmp_path), overrides=[
        "system.d=8", "data.n=6", "data.steps=4", "data.test_n=3",
        "model.filters=2", "model.blocks=1", "inference.n_samples=2",
        "train.phases=[{epochs: 1, lr: 0.001, batch_size: 4, window: 3}]",
    ])
    outcome = smdp.experiments.stages.run_all(config)[-1]
    metrics = {row.metric for row in outcome.rows}
    assert {"mse_ode", "mse_sde", "spectral_ode", "spectral_sde", "mse_solver-only"} <= metrics
    names = {os.path.basename(path) for path in outcome.artifacts}
    assert {"reconstructions.svg", "posterior-samples.svg", "metrics.csv"} <= names


# reproduce


@pytest.fixture(scope="module")
def toy_base():
    return Config.from_sources(experiment="toy-sde")


def test_loss_comparison_cells(toy_base):
    cells = Reproduce.cells_for("loss-comparison", toy_base)
    assert len(cells) == 12
    assert {c.group for c in cells} == {"data"}
    by_name = {c.name: c.config for c in cells}
    assert by_name["ism-f0.01"].loss == "ism"
    assert by_name["ism-f0.01"].fraction == 0.01
    assert by_name["multi-step-f1"].train_plan().s_max == 10


def test_grid_robustness_cells(toy_base):
    cells = {c.name: c.config for c in Reproduce.cells_for("grid-robustness", toy_base)}
    assert cells["grid-one-step"].model_kind == "grid"
    assert cells["grid-multi-step"].train_plan().s_max == 10


def test_heat_cells():
    base = Config.from_sources(experiment="heat-equation")
    comparison = {c.name: c.config for c in Reproduce.cells_for("heat-comparison", base)}
    assert comparison["smdp"].train_plan().reverse_physics
    assert not comparison["score-only"].train_plan().reverse_physics

    ablation = Reproduce.cells_for("ablation", base)
    assert [c.name for c in ablation] == ["s-max-2", "s-max-4", "s-max-8", "s-max-16", "s-max-32"]
    assert [c.config.train_plan().s_max for c in ablation] == [2, 4, 8, 16, 32]


def test_score_error_cells():
    base = Config.from_sources(experiment="affine-sde")
    cells = Reproduce.cells_for("score-error", base)
    assert [c.config.grid().steps for c in cells] == [20, 40, 80]
    assert len({c.group for c in cells}) == 3
    assert Reproduce.cells_for("convergence", base) == []


def test_cells_check_the_experiment(toy_base):
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        Reproduce.cells_for("ablation", toy_base)
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        Reproduce.cells_for("table-9", toy_base)


def test_target_aliases(toy_base):
    assert Reproduce.resolve_target("table1") == "loss-comparison"
    assert Reproduce.resolve_target("Loss-Comparison") == "loss-comparison"
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        Reproduce.resolve_target("table-9")

    aliased = Reproduce.cells_for("table1", toy_base)
    assert [c.name for c in aliased] == [c.name for c in Reproduce.cells_for("loss-comparison", toy_base)]


def _loss_comparison_summary(q_multi_ode=0.9, q_multi_sde=0.95, q_one=0.5, q_ism=0.1):
    return [
        Row("toy-sde/multi-step-f1", "q_ode", q_multi_ode),
        Row("toy-sde/multi-step-f1", "q_sde", q_multi_sde),
        Row("toy-sde/one-step-f1", "q_ode", q_one),
        Row("toy-sde/ism-f1", "q_ode", q_ism),
    ]


def test_acceptance_of_the_loss_comparison():
    assert Reproduce.check_acceptance("loss-comparison", _loss_comparison_summary()) == []
    failures = Reproduce.check_acceptance("loss-comparison", _loss_comparison_summary(q_multi_ode=0.4))
    assert len(failures) == 2


def test_missing_values_fail_acceptance():
    summary = _loss_comparison_summary()[:2]
    failures = Reproduce.check_acceptance("loss-comparison", summary)
    assert any("missing" in failure for failure in failures)


def test_acceptance_of_the_convergence_order():
    label = "multiplicative-affine-sde/convergence"
    assert Reproduce.check_acceptance("convergence", [Row(label, "strong_order", 0.5)]) == []
    assert len(Reproduce.check_acceptance("convergence", [Row(label, "strong_order", 1.0)])) == 1


def test_summary_table():
    table = Reproduce.summary_table([
        Row("toy-sde/a", "q_ode", 0.75, 3, 0.1),
        Row("toy-sde/a", "q_sde", float("nan"), 0, float("nan")),
        Row("toy-sde/b", "q_ode", 0.5, 1, 0.0),
    ])
    assert table == [
        {"run": "toy-sde/a", "q_ode": "0.75±0.1", "q_sde": "nan"},
        {"run": "toy-sde/b", "q_ode": "0.5±0"},
    ]


@pytest.mark.slow
def test_reproduce_convergence_writes_reports(tmp_path):
    base = Config.from_sources(experiment="affine-sde", out=str(tmp_path), overrides=["seeds=[0]"])
    result = Reproduce.reproduce("convergence", base, check=False)
    names = {os.path.basename(path) for path in result.artifacts}
    assert names == {"runs.csv", "summary.csv", "table.csv"}
    assert any(row.metric == "strong_order" for row in result.summary)
    assert os.path.dirname(result.artifacts[0]) == os.path.join(str(tmp_path), "reproduce", "convergence")


@pytest.mark.slow
def test_reproduce_raises_on_missed_thresholds(tmp_path, mocker):
    mocker.patch.object(Reproduce, "check_acceptance", return_value=["strong order too low"])
    base = Config.from_sources(experiment="affine-sde", out=str(tmp_path), overrides=["seeds=[0]"])
    with pytest.raises(smdp.exceptions.AcceptanceError) as exc_info:
        Reproduce.reproduce("convergence", base)
    assert exc_info.value.exit_code == smdp.exceptions.EXIT_ACCEPTANCE
    assert os.path.exists(os.path.join(str(tmp_path), "reproduce", "convergence", "summary.csv"))


# plots


def test_figures_are_svg(tmp_path):
    heatmap = smdp.experiments.plots.heatmap_svg(np.arange(6.0).reshape(2, 3), (0, 1), (0, 1), title="a<b")
    assert heatmap.startswith("<svg")
    assert "a&lt;b" in heatmap
    assert heatmap.count("<rect") == 6

    chart = smdp.experiments.plots.line_chart_svg(
        {"loss": ([0, 1, 2], [1.0, 0.1, np.nan])}, log_y=True)
    assert chart.count("<circle") == 2

    grid = smdp.experiments.plots.image_grid_svg([np.zeros((2, 2)), np.ones((2, 2))], labels=["x", "y"])
    assert grid.count("<rect") == 8

    path = smdp.experiments.plots.write_svg(str(tmp_path / "figs" / "grid.svg"), grid)
    assert open(path).read() == grid


def test_color_scale():
    assert smdp.experiments.plots.color_for(float("nan"), 0, 1) == "#808080"
    assert smdp.experiments.plots.color_for(0.5, 0, 1) == "#ffffff"
    assert smdp.experiments.plots.color_for(0.0, 0, 1) != smdp.experiments.plots.color_for(1.0, 0, 1)
