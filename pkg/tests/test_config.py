import pytest

import smdp.exceptions
import smdp.input.config
import smdp.input.parsing

Config = smdp.input.config.ExperimentConfig


@pytest.mark.parametrize("assignment,expected", [
    ("train.phases.0.lr=1e-3", ("train.phases.0.lr", 1e-3)),
    ("train.jitter=true", ("train.jitter", True)),
    ("eval.s_max_values=[2, 4]", ("eval.s_max_values", [2, 4])),
    ("model.kind=grid", ("model.kind", "grid")),
    ("data.n = 10", ("data.n", 10)),
    ("out=", ("out", "")),
])
def test_parse_override(assignment, expected):
    assert smdp.input.config.parse_override(assignment) == expected


@pytest.mark.parametrize("assignment", ["noequals", "=3", " =3"])
def test_parse_override_rejects(assignment):
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.input.config.parse_override(assignment)


def test_deep_merge_keeps_base():
    base = {"a": {"b": 1, "c": 2}, "d": 3}
    merged = smdp.input.config.deep_merge(base, {"a": {"b": 5}})
    assert merged == {"a": {"b": 5, "c": 2}, "d": 3}
    assert base["a"]["b"] == 1


def test_canonical_json_is_sorted_and_compact():
    assert smdp.input.config.canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'


# resolution


def test_defaults():
    config = Config.from_sources()
    assert config.experiment == "toy-sde"
    assert config.seed == 0
    assert config.loss == "multi-step"
    assert config.model_kind == "mlp"
    assert config.inference_modes == ["ode", "sde"]
    assert config.section("train")["phases"] == smdp.input.config.plan_preset("toy-sde", "multi-step")


def test_explicit_arguments_and_overrides():
    config = Config.from_sources(
        experiment="affine-sde", seed=4, out="elsewhere", overrides=["system.g=0.1", "data.n=50"])
    assert config.experiment == "affine-sde"
    assert config.seed == 4
    assert config.out == "elsewhere"
    assert config.section("system") == {"lam": 0.5, "g": 0.1}
    assert config.section("data")["n"] == 50


def test_experiment_override_selects_defaults():
    config = Config.from_sources(overrides=["experiment=heat-equation"])
    assert config.experiment == "heat-equation"
    assert config.model_kind == "conv"
    assert config.section("system")["d"] == 16


def test_full_scale():
    config = Config.from_sources(experiment="heat-equation", full_scale=True)
    assert config.full_scale
    assert config.section("system")["d"] == 32
    assert config.section("model")["filters"] == 32


def test_configuration_document():
    contents = "experiment: heat-equation\nsystem:\n  d: 8\ntrain:\n  loss: dsm\n"
    config = Config.from_sources(contents=contents)
    assert config.experiment == "heat-equation"
    assert config.section("system")["d"] == 8
    assert config.loss == "dsm"
    assert config.train_plan().phases[0].epochs == 20


def test_explicit_experiment_wins_over_document():
    config = Config.from_sources(experiment="affine-sde", contents="experiment: toy-sde\n")
    assert config.experiment == "affine-sde"


def test_configuration_file_from_environment(tmp_path, monkeypatch):
    path = tmp_path / "config.yaml"
    path.write_text("experiment: affine-sde\nseed: 9\n")
    monkeypatch.setenv(smdp.input.config.CONFIG_ENV_VAR, str(path))
    config = Config.from_sources()
    assert config.experiment == "affine-sde"
    assert config.seed == 9


def test_json_documents_are_accepted():
    config = Config.from_sources(contents='{"experiment": "affine-sde", "data": {"n": 12, "dt": 0.05, "steps": 4}}')
    assert config.section("data")["n"] == 12


@pytest.mark.parametrize("overrides", [
    ["system.viscosity=1"],
    ["data.fraction=2"],
    ["data.dt=0"],
    ["model.kind=transformer"],
    ["train.loss=adversarial"],
    ["inference.modes=[ode, euler]"],
    ["experiment=navier-stokes"],
    ["system.lambda1.x=1"],
])
def test_invalid_settings(overrides):
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        Config.from_sources(overrides=overrides)


def test_single_step_loss_with_long_window_is_rejected():
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        Config.from_sources(overrides=[
            "train.loss=ism",
            "train.phases=[{epochs: 1, lr: 0.001, batch_size: 4, window: 4}]",
        ])


def test_missing_preset():
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        smdp.input.config.plan_preset("heat-equation", "ism")
    assert smdp.input.config.plan_preset("affine-sde", "ssm-vr") == smdp.input.config.plan_preset(
        "affine-sde", "one-step")


def test_syntax_errors_have_a_position():
    with pytest.raises(smdp.input.parsing.ParsingException) as exc_info:
        Config.from_sources(contents="data:\n  n: [1, 2\n")
    assert exc_info.value.line > 0
    assert "line" in exc_info.value.message
    assert exc_info.value.exit_code == smdp.exceptions.EXIT_CONFIG_ERROR


def test_documents_must_be_mappings():
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        Config.from_sources(contents="- 1\n- 2\n")


def test_missing_file(tmp_path):
    with pytest.raises(smdp.exceptions.MissingArtifactError):
        Config.from_sources(filename=str(tmp_path / "missing.yaml"))


# hashing


def test_stage_hashes_cover_their_inputs():
    base = Config.from_sources()
    changed_loss = base.replace({"train.jitter": True})
    changed_inference = base.replace({"inference.c": 1.5})
    changed_workers = base.replace({"train.workers": 4})

    assert changed_loss.config_hash("generate") == base.config_hash("generate")
    assert changed_loss.config_hash("train") != base.config_hash("train")

    assert changed_inference.config_hash("train") == base.config_hash("train")
    assert changed_inference.config_hash("eval") != base.config_hash("eval")

    for stage in smdp.input.config.STAGES:
        assert changed_workers.config_hash(stage) == base.config_hash(stage)


def test_hash_is_stable_across_resolutions():
    assert Config.from_sources(seed=3).config_hash() == Config.from_sources(seed=3).config_hash()
    assert Config.from_sources(seed=3).config_hash() != Config.from_sources(seed=4).config_hash()


def test_unknown_stage():
    with pytest.raises(smdp.exceptions.SmdpConfigError):
        Config.from_sources().config_hash("deploy")


def test_replacing_the_loss_resets_phases():
    config = Config.from_sources().replace({"train.loss": "one-step"})
    assert config.section("train")["phases"] == smdp.input.config.plan_preset("toy-sde", "one-step")
    kept = Config.from_sources().replace({"train.jitter": True})
    assert kept.section("train")["phases"] == smdp.input.config.plan_preset("toy-sde", "multi-step")


# builders


def test_builders():
    config = Config.from_sources(experiment="affine-sde", overrides=["eval.g=0.2"])
    spec, _ = config.system()
    assert spec.diffusion(0.0) == pytest.approx(0.04)
    shifted, _ = config.system(evaluation=True)
    assert shifted.diffusion(0.0) == pytest.approx(0.2)

    inference = config.inference_config("sde")
    assert inference.steps == 40
    assert inference.dt == pytest.approx(0.05)
    assert inference.seed == 0

    model = config.model(seed=3)
    assert model.dim == 1 and model.seed == 3


def test_sample_x_end():
    config = Config.from_sources()
    first = config.sample_x_end(50)
    assert first.shape == (50, 1)
    assert first.min() >= -0.1 and first.max() <= 0.1
    assert (first == config.sample_x_end(50)).all()
