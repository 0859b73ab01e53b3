import json
import sys

import click.testing
import loguru
import pytest

import smdp.__version__
import smdp.cli.__main__
import smdp.exceptions

TINY_TOY = [
    "--set", "data.n=12", "--set", "data.steps=10", "--set", "data.test_n=6",
    "--set", "inference.n_trajectories=6", "--set", "model.widths=[4]",
    "--set", "train.loss=one-step",
    "--set", "train.phases=[{epochs: 1, lr: 0.001, batch_size: 32, stride: 1}]",
]


@pytest.fixture(autouse=True)
def restore_logging():
    yield
    loguru.logger.remove()
    loguru.logger.add(sys.stderr)


@pytest.fixture
def runner():
    return click.testing.CliRunner()


def invoke(runner, *args):
    return runner.invoke(smdp.cli.__main__.cli, list(args), catch_exceptions=False)


def dry_run_payload(result):
    return json.loads(result.output[result.output.index("{"):])


def test_version(runner):
    result = invoke(runner, "--version")
    assert result.exit_code == 0
    assert smdp.__version__.__version__ in result.output


def test_dry_run_prints_the_resolved_configuration(runner, tmp_path):
    result = invoke(runner, "-q", "generate", "-e", "toy-sde", "--seed", "4", "-o", str(tmp_path), "--dry-run")
    assert result.exit_code == 0
    payload = dry_run_payload(result)
    assert payload["stage"] == "generate"
    assert payload["config"]["seed"] == 4
    assert payload["dataset"].endswith("dataset.smdp")
    assert not (tmp_path / "toy-sde").exists()

    again = invoke(runner, "-q", "generate", "-e", "toy-sde", "--seed", "4", "-o", str(tmp_path), "--dry-run")
    assert dry_run_payload(again)["config_hash"] == payload["config_hash"]

    other = invoke(runner, "-q", "generate", "-e", "toy-sde", "--seed", "5", "-o", str(tmp_path), "--dry-run")
    assert dry_run_payload(other)["config_hash"] != payload["config_hash"]


def test_bad_override_is_a_configuration_error(runner):
    result = invoke(runner, "-q", "generate", "-e", "toy-sde", "--set", "data.n=-3", "--dry-run")
    assert result.exit_code == smdp.exceptions.EXIT_CONFIG_ERROR
    assert "ERROR" in result.output


def test_reproduce_dry_run_lists_the_cells(runner):
    result = invoke(runner, "-q", "reproduce", "loss-comparison", "--dry-run")
    assert result.exit_code == 0
    payload = dry_run_payload(result)
    assert payload["target"] == "loss-comparison"
    assert len(payload["cells"]) == 12
    assert payload["seeds"] == [0, 1, 2]


def test_unknown_target_is_rejected(runner):
    result = invoke(runner, "-q", "reproduce", "table-9", "--dry-run")
    assert result.exit_code == 2


def test_table1_names_the_loss_comparison(runner):
    result = invoke(runner, "-q", "reproduce", "table1", "--dry-run")
    assert result.exit_code == 0
    payload = dry_run_payload(result)
    assert payload["target"] == "loss-comparison"
    assert len(payload["cells"]) == 12


@pytest.mark.parametrize("flag", ["--paper-scale", "--full-scale"])
def test_full_scale_flags(runner, tmp_path, flag):
    result = invoke(runner, "-q", "generate", "-e", "heat-equation", "-o", str(tmp_path), flag, "--dry-run")
    assert result.exit_code == 0
    assert dry_run_payload(result)["config"]["scale"] == "full"

    desk = invoke(runner, "-q", "generate", "-e", "heat-equation", "-o", str(tmp_path), "--dry-run")
    assert dry_run_payload(desk)["config"]["scale"] == "desk"


def test_train_needs_a_dataset(runner, tmp_path):
    result = invoke(runner, "-q", "train", "-e", "toy-sde", "-o", str(tmp_path), *TINY_TOY)
    assert result.exit_code == smdp.exceptions.EXIT_CONFIG_ERROR
    assert "generate" in result.output


@pytest.mark.slow
def test_generate_train_eval(runner, tmp_path):
    common = ["-e", "toy-sde", "-o", str(tmp_path)] + TINY_TOY
    assert invoke(runner, "-q", "generate", *common).exit_code == 0
    assert invoke(runner, "-q", "train", *common).exit_code == 0

    result = invoke(runner, "-q", "eval", *common)
    assert result.exit_code == 0
    assert "experiment,metric,value,n,std" in result.output
    assert "q_ode" in result.output

    skipped = invoke(runner, "generate", *common)
    assert skipped.exit_code == 0
    assert "up to date" in skipped.output
