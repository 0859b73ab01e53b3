"""
This submodule resolves the configuration of an experiment. Values come,
from lowest to highest precedence, from the built-in defaults of the
experiment (desk scale, or full scale with ``--full-scale``), from a
configuration file, from explicit arguments (seed, output directory) and
from ``--set dotted.key=value`` overrides.

The resolved configuration is canonicalised and hashed per stage
(``generate``, ``train``, ``eval``); each stage hash covers exactly the
settings its outputs depend on.
"""

import copy
import hashlib
import json
import os
import typing

import loguru
import numpy as np
import yaml

import smdp.exceptions
import smdp.helpers.dict_serializer
import smdp.input.parsing
import smdp.models.base
import smdp.physics.heat
import smdp.physics.toy
import smdp.sde.simulation
import smdp.training.plan
import smdp.inference.solver


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "EXPERIMENT_TOY",
    "EXPERIMENT_AFFINE",
    "EXPERIMENT_HEAT",
    "EXPERIMENTS",

    "SCALE_DESK",
    "SCALE_FULL",

    "STAGE_GENERATE",
    "STAGE_TRAIN",
    "STAGE_EVAL",
    "STAGES",

    "CONFIG_ENV_VAR",

    "default_config",
    "plan_preset",
    "parse_override",
    "deep_merge",
    "canonical_json",

    "ExperimentConfig",
]


EXPERIMENT_TOY = "toy-sde"
EXPERIMENT_AFFINE = "affine-sde"
EXPERIMENT_HEAT = "heat-equation"

EXPERIMENTS: typing.List[str] = [EXPERIMENT_TOY, EXPERIMENT_AFFINE, EXPERIMENT_HEAT]

SCALE_DESK = "desk"
SCALE_FULL = "full"

STAGE_GENERATE = "generate"
STAGE_TRAIN = "train"
STAGE_EVAL = "eval"

STAGES: typing.List[str] = [STAGE_GENERATE, STAGE_TRAIN, STAGE_EVAL]

CONFIG_ENV_VAR = "SMDP_CONFIG"


logger = loguru.logger


# =============================================================================
# Built-in defaults


_BASE_DEFAULTS: typing.Dict[str, typing.Dict[str, typing.Dict[str, typing.Any]]] = {
    EXPERIMENT_TOY: {
        SCALE_DESK: {
            "system": {"lambda1": 7.0, "lambda2": 0.03},
            "data": {"n": 2500, "dt": 0.02, "steps": 500, "t0": 0.0, "fraction": 1.0, "test_n": 1000},
            "model": {"kind": "mlp", "widths": [30, 30, 25, 20, 10]},
            "train": {"loss": "multi-step", "jitter": False},
            "inference": {"modes": ["ode", "sde"], "n_trajectories": 1000, "x_end_range": [-0.1, 0.1]},
            "eval": {"escape_bound": 1.25, "tolerance": 0.1},
        },
        SCALE_FULL: {},
    },
    EXPERIMENT_AFFINE: {
        SCALE_DESK: {
            "system": {"lam": 0.5, "g": 0.04},
            "data": {"n": 2500, "dt": 0.05, "steps": 40, "t0": 0.0, "fraction": 1.0, "test_n": 2000},
            "model": {"kind": "mlp", "widths": [30, 30, 25, 20, 10]},
            "train": {"loss": "one-step", "jitter": False},
            "inference": {
                "modes": ["ode"], "n_trajectories": 1000, "x_end_range": [-0.1, 0.1],
                "langevin_steps": 5000, "langevin_epsilon": 2e-5, "langevin_analytic": True,
            },
            "eval": {"score_time": 1.0},
        },
        SCALE_FULL: {},
    },
    EXPERIMENT_HEAT: {
        SCALE_DESK: {
            "system": {"d": 16, "g": 0.1, "profile": "min-index", "alpha": 1.0, "grf_exponent": 4.0},
            "data": {"n": 250, "dt": 6.25e-3, "steps": 32, "t0": 0.0, "fraction": 1.0, "test_n": 50},
            "model": {"kind": "conv", "filters": 8, "blocks": 2},
            "train": {"loss": "multi-step", "jitter": True},
            "inference": {"modes": ["ode", "sde"], "n_samples": 10},
            "eval": {"s_max_values": [2, 4, 8, 16, 32]},
        },
        SCALE_FULL: {
            "system": {"d": 32},
            "data": {"n": 2500, "test_n": 500},
            "model": {"kind": "conv", "filters": 32, "blocks": 4},
        },
    },
}


def _phases(*phases: typing.Dict[str, typing.Any]) -> typing.List[typing.Dict[str, typing.Any]]:
    return [dict(phase) for phase in phases]


_PLAN_PRESETS: typing.Dict[str, typing.Dict[str, typing.Dict[str, typing.List[typing.Dict[str, typing.Any]]]]] = {
    EXPERIMENT_TOY: {
        SCALE_FULL: {
            "one-step": _phases(
                {"epochs": 250, "lr": 1e-3, "batch_size": 256, "stride": 5},
                {"epochs": 250, "lr": 1e-4, "batch_size": 256, "stride": 1},
                {"epochs": 750, "lr": 1e-5, "batch_size": 256, "stride": 1},
            ),
            "multi-step": _phases(
                {"epochs": 1000, "lr": 1e-3, "batch_size": 512, "stride": 5, "window": 2},
                {"epochs": 9000, "lr": 1e-4, "batch_size": 512, "stride": 1, "window": 2,
                 "window_max": 10, "window_step": 1, "window_every": 1000},
            ),
            "ism": _phases(
                {"epochs": 2000, "lr": 1e-3, "batch_size": 10000, "stride": 1},
                {"epochs": 2000, "lr": 1e-4, "batch_size": 10000, "stride": 1},
            ),
            "ssm-vr": _phases(
                {"epochs": 2000, "lr": 1e-3, "batch_size": 10000, "stride": 1},
                {"epochs": 2000, "lr": 1e-4, "batch_size": 10000, "stride": 1},
            ),
        },
        SCALE_DESK: {
            "one-step": _phases(
                {"epochs": 8, "lr": 1e-3, "batch_size": 256, "stride": 5},
                {"epochs": 4, "lr": 1e-4, "batch_size": 256, "stride": 5},
                {"epochs": 4, "lr": 1e-5, "batch_size": 256, "stride": 5},
            ),
            "multi-step": _phases(
                {"epochs": 10, "lr": 1e-3, "batch_size": 512, "stride": 5, "window": 2},
                {"epochs": 9, "lr": 1e-4, "batch_size": 512, "stride": 5, "window": 2,
                 "window_max": 10, "window_step": 1, "window_every": 1},
            ),
            "ism": _phases(
                {"epochs": 200, "lr": 1e-3, "batch_size": 10000, "stride": 5},
                {"epochs": 100, "lr": 1e-4, "batch_size": 10000, "stride": 5},
            ),
            "ssm-vr": _phases(
                {"epochs": 200, "lr": 1e-3, "batch_size": 10000, "stride": 5},
                {"epochs": 100, "lr": 1e-4, "batch_size": 10000, "stride": 5},
            ),
        },
    },
    EXPERIMENT_AFFINE: {
        SCALE_FULL: {
            "one-step": _phases(
                {"epochs": 250, "lr": 1e-3, "batch_size": 256, "stride": 1},
                {"epochs": 250, "lr": 1e-4, "batch_size": 256, "stride": 1},
            ),
            "multi-step": _phases(
                {"epochs": 250, "lr": 1e-3, "batch_size": 256, "stride": 1, "window": 2},
                {"epochs": 250, "lr": 1e-4, "batch_size": 256, "stride": 1, "window": 2,
                 "window_max": 10, "window_every": 25},
            ),
        },
        SCALE_DESK: {
            "one-step": _phases(
                {"epochs": 30, "lr": 1e-3, "batch_size": 256, "stride": 1},
                {"epochs": 10, "lr": 1e-4, "batch_size": 256, "stride": 1},
            ),
            "multi-step": _phases(
                {"epochs": 30, "lr": 1e-3, "batch_size": 256, "stride": 1, "window": 2},
                {"epochs": 10, "lr": 1e-4, "batch_size": 256, "stride": 1, "window": 2,
                 "window_max": 10, "window_every": 1},
            ),
        },
    },
    EXPERIMENT_HEAT: {
        SCALE_FULL: {
            "multi-step": _phases(
                {"epochs": 28, "lr": 1e-4, "batch_size": 16, "stride": 1, "window": 6,
                 "window_max": 32, "window_step": 2, "window_every": 2},
                {"epochs": 80, "lr": 1e-4, "batch_size": 16, "stride": 1, "window": 32,
                 "decay_every": 20, "decay_factor": 0.5},
            ),
            "dsm": _phases(
                {"epochs": 108, "lr": 1e-4, "batch_size": 16, "stride": 1,
                 "decay_every": 20, "decay_factor": 0.5},
            ),
        },
        SCALE_DESK: {
            "multi-step": _phases(
                {"epochs": 14, "lr": 1e-3, "batch_size": 16, "stride": 1, "window": 6,
                 "window_max": 32, "window_step": 2, "window_every": 1},
                {"epochs": 6, "lr": 1e-4, "batch_size": 16, "stride": 1, "window": 32,
                 "decay_every": 2, "decay_factor": 0.5},
            ),
            "dsm": _phases(
                {"epochs": 20, "lr": 1e-3, "batch_size": 16, "stride": 1,
                 "decay_every": 5, "decay_factor": 0.5},
            ),
        },
    },
}


def deep_merge(
        base: typing.Dict[str, typing.Any],
        update: typing.Optional[typing.Dict[str, typing.Any]],
) -> typing.Dict[str, typing.Any]:
    """Returns a copy of :py:data:`base` with the leaves of :py:data:`update` merged in."""
    result = copy.deepcopy(base)
    for (key, value) in (update or {}).items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = deep_merge(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result


def _check_experiment(experiment: str) -> str:
    if experiment not in EXPERIMENTS:
        raise smdp.exceptions.SmdpConfigError(
            "unknown experiment '{}', expected one of {}".format(experiment, EXPERIMENTS))
    return experiment


def default_config(experiment: str, full_scale: bool = False) -> typing.Dict[str, typing.Any]:
    """The built-in configuration of an experiment (full scale layered on desk scale)."""
    defaults = _BASE_DEFAULTS[_check_experiment(experiment)]
    config = deep_merge(defaults[SCALE_DESK], defaults[SCALE_FULL] if full_scale else None)
    config.update({
        "experiment": experiment,
        "scale": SCALE_FULL if full_scale else SCALE_DESK,
        "seed": 0,
        "seeds": [0, 1, 2],
        "out": "runs",
    })
    return config


def plan_preset(experiment: str, loss: str, full_scale: bool = False) -> typing.List[typing.Dict[str, typing.Any]]:
    """
    Built-in training phases for a loss. Losses without a dedicated preset
    reuse the one-step schedule.

    :raises SmdpConfigError: if the experiment has no schedule for the loss
    """
    presets = _PLAN_PRESETS[_check_experiment(experiment)][SCALE_FULL if full_scale else SCALE_DESK]
    phases = presets.get(loss)
    if phases is None and loss != smdp.training.plan.LOSS_MULTI_STEP:
        phases = presets.get(smdp.training.plan.LOSS_ONE_STEP)
    if phases is None:
        raise smdp.exceptions.SmdpConfigError(
            "experiment '{}' has no built-in schedule for loss '{}'; give train.phases".format(experiment, loss))
    return copy.deepcopy(phases)


def parse_override(assignment: str) -> typing.Tuple[str, typing.Any]:
    """
    Splits ``dotted.key=value``; the value is read as a YAML scalar (so
    ``1e-3``, ``true`` and ``[2, 4]`` get their natural types).

    :raises SmdpConfigError: if there is no ``=`` or the key is empty
    """
    if "=" not in assignment:
        raise smdp.exceptions.SmdpConfigError("override '{}' is not of the form key=value".format(assignment))
    key, raw = assignment.split("=", 1)
    key = key.strip()
    if not key:
        raise smdp.exceptions.SmdpConfigError("override '{}' has an empty key".format(assignment))
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError:
        value = raw
    if isinstance(value, str):
        # YAML 1.1 reads exponents without a dot (1e-3) as strings
        try:
            value = float(value)
        except ValueError:
            pass
    return key, value


def canonical_json(obj: typing.Any) -> str:
    return json.dumps(
        smdp.helpers.dict_serializer.to_dict(obj),
        sort_keys=True,
        separators=(",", ":"),
        cls=smdp.input.parsing.SmdpJSONEncoder,
    )


def _sha256(obj: typing.Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf8")).hexdigest()


# =============================================================================


class ExperimentConfig:
    """
    A resolved, validated experiment configuration, with builders for the
    objects each stage needs.
    """

    def __init__(self, value: typing.Dict[str, typing.Any]):
        value = copy.deepcopy(dict(value))
        experiment = _check_experiment(value.get("experiment", EXPERIMENT_TOY))

        train = dict(value.get("train") or {})
        if not train.get("phases"):
            train["phases"] = plan_preset(
                experiment, train.get("loss", smdp.training.plan.LOSS_MULTI_STEP),
                full_scale=value.get("scale") == SCALE_FULL)
        value["train"] = train

        self._spec = smdp.input.parsing.ExperimentSpecification(value)
        self._dict = self._spec.to_dict()

        # fail early on inconsistent plans and settings
        self.train_plan()
        for mode in self.inference_modes:
            self.inference_config(mode)
        if self.model_kind not in smdp.models.base.MODEL_KINDS:
            raise smdp.exceptions.SmdpConfigError(
                "unknown model kind '{}', expected one of {}".format(self.model_kind, smdp.models.base.MODEL_KINDS))

    def __repr__(self):
        return "ExperimentConfig(experiment={!r}, scale={!r}, seed={}, hash={})".format(
            self.experiment, self.scale, self.seed, self.config_hash(STAGE_EVAL)[:12])

    @classmethod
    def from_sources(
            cls,
            experiment: typing.Optional[str] = None,
            filename: typing.Optional[str] = None,
            contents: typing.Optional[str] = None,
            overrides: typing.Sequence[str] = (),
            full_scale: bool = False,
            seed: typing.Optional[int] = None,
            out: typing.Optional[str] = None,
    ) -> "ExperimentConfig":
        """
        Resolves a configuration from the built-in defaults, an optional
        file (or document contents), explicit arguments and overrides.

        :raises SmdpConfigError: on any invalid or inconsistent value
        """
        if filename is None and contents is None and os.getenv(CONFIG_ENV_VAR):
            filename = os.getenv(CONFIG_ENV_VAR)
            logger.debug("Using configuration file from ${}: '{}'.", CONFIG_ENV_VAR, filename)

        document: typing.Dict[str, typing.Any] = dict()
        if filename is not None or contents is not None:
            document = smdp.input.parsing.parse_specification(contents=contents, filename=filename)

        parsed_overrides = [parse_override(assignment) for assignment in overrides]

        # the experiment name selects the defaults, so it is resolved first
        resolved_experiment = experiment if experiment is not None else document.get("experiment", EXPERIMENT_TOY)
        for (key, value) in parsed_overrides:
            if key == "experiment":
                resolved_experiment = value

        config = default_config(resolved_experiment, full_scale=full_scale)

        config = deep_merge(config, document)
        config["experiment"] = resolved_experiment
        if seed is not None:
            config["seed"] = int(seed)
        if out is not None:
            config["out"] = out
        try:
            for (key, value) in parsed_overrides:
                smdp.helpers.dict_serializer.set_dotted(config, key, value)
        except ValueError as exc:
            raise smdp.exceptions.SmdpConfigError("invalid override: {}".format(exc))

        return cls(config)

    def replace(self, overrides: typing.Dict[str, typing.Any]) -> "ExperimentConfig":
        """
        Returns a new configuration with dotted-key overrides applied. When
        ``train.loss`` changes and no phases are given, the phases are reset
        to the preset of the new loss.
        """
        value = copy.deepcopy(self._dict)
        for (key, item) in overrides.items():
            smdp.helpers.dict_serializer.set_dotted(value, key, item)
        loss_changed = "train.loss" in overrides and overrides["train.loss"] != self.loss
        if loss_changed and "train.phases" not in overrides:
            value["train"].pop("phases", None)
        return ExperimentConfig(value)

    # plain values

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return copy.deepcopy(self._dict)

    def section(self, name: str) -> typing.Dict[str, typing.Any]:
        return copy.deepcopy(self._dict.get(name) or {})

    @property
    def experiment(self) -> str:
        return self._dict["experiment"]

    @property
    def scale(self) -> str:
        return self._dict.get("scale", SCALE_DESK)

    @property
    def full_scale(self) -> bool:
        return self.scale == SCALE_FULL

    @property
    def seed(self) -> int:
        return int(self._dict.get("seed", 0))

    @property
    def seeds(self) -> typing.List[int]:
        return [int(s) for s in self._dict.get("seeds", [self.seed])]

    @property
    def out(self) -> str:
        return self._dict.get("out", "runs")

    @property
    def model_kind(self) -> str:
        return self._spec["model"]["kind"]

    @property
    def loss(self) -> str:
        return self._spec["train"]["loss"]

    @property
    def fraction(self) -> float:
        return float(self._spec["data"].get("fraction", 1.0))

    @property
    def test_n(self) -> int:
        return int(self._spec["data"].get("test_n", 100))

    @property
    def workers(self) -> typing.Optional[int]:
        return self._spec["train"].get("workers")

    @property
    def inference_modes(self) -> typing.List[str]:
        modes = self._spec["inference"]["modes"]
        return [modes] if isinstance(modes, str) else list(modes)

    # hashing

    def stage_payload(self, stage: str) -> typing.Dict[str, typing.Any]:
        """The subset of settings a stage's outputs depend on."""
        if stage not in STAGES:
            raise smdp.exceptions.SmdpConfigError("unknown stage '{}', expected one of {}".format(stage, STAGES))

        data = self.section("data")
        payload = {
            "experiment": self.experiment,
            "system": self.section("system"),
            "data": {key: data[key] for key in ("n", "dt", "steps", "t0") if key in data},
            "seed": self.seed,
        }
        if stage in (STAGE_TRAIN, STAGE_EVAL):
            train = self.section("train")
            train.pop("workers", None)
            payload.update({
                "fraction": self.fraction,
                "model": self.section("model"),
                "train": train,
            })
        if stage == STAGE_EVAL:
            payload.update({
                "test_n": self.test_n,
                "inference": self.section("inference"),
                "eval": self.section("eval"),
            })
        return payload

    def config_hash(self, stage: str = STAGE_EVAL) -> str:
        return _sha256(self.stage_payload(stage))

    # builders

    def system(
            self,
            evaluation: bool = False,
    ) -> typing.Tuple[smdp.sde.simulation.SdeSpec, smdp.sde.simulation.Sampler]:
        """
        Builds the SDE and the sampler of its initial distribution. With
        :py:data:`evaluation` set, the ``eval.alpha``/``eval.g`` overrides
        (test-time distribution shift) are applied.
        """
        system = self.section("system")
        if evaluation:
            shift = self.section("eval")
            for key in ("alpha", "g"):
                if shift.get(key) is not None:
                    system[key] = shift[key]

        try:
            if self.experiment == EXPERIMENT_TOY:
                toy = smdp.physics.toy.QuadraticDrift1D(
                    lambda1=system.get("lambda1", 7.0), lambda2=system.get("lambda2", 0.03))
                return toy.spec(), smdp.physics.toy.binary_initial_sampler

            if self.experiment == EXPERIMENT_AFFINE:
                affine = smdp.physics.toy.AffineDrift1D(lam=system.get("lam", 0.5), g=system.get("g", 0.04))
                return affine.spec(), smdp.physics.toy.binary_initial_sampler

            heat = smdp.physics.heat.HeatEquation2D(
                d=int(system.get("d", 32)),
                g=system.get("g", 0.1),
                profile=system.get("profile", smdp.physics.heat.PROFILE_MIN_INDEX),
                alpha=system.get("alpha", 1.0),
                grf_exponent=system.get("grf_exponent", 4.0),
            )
            return heat.spec(), heat.initial_sampler()

        except TypeError as exc:
            raise smdp.exceptions.SmdpConfigError("invalid system settings {}: {}".format(system, exc))

    def grid(self) -> smdp.sde.simulation.TimeGrid:
        data = self.section("data")
        return smdp.sde.simulation.TimeGrid.validated(
            t0=float(data.get("t0", 0.0)), dt=float(data["dt"]), steps=int(data["steps"]))

    def train_plan(self) -> smdp.training.plan.TrainPlan:
        train = self.section("train")
        train.pop("workers", None)
        train.setdefault("seed", self.seed)
        return smdp.training.plan.TrainPlan.from_dict(train)

    def model(self, seed: typing.Optional[int] = None) -> smdp.models.base.ScoreModel:
        spec, _ = self.system()
        model_config = smdp.input.parsing.ModelConfig(self.section("model"))
        try:
            return smdp.models.base.init_model(
                kind=model_config["kind"],
                dim=spec.dim,
                seed=self.seed if seed is None else int(seed),
                **model_config.options,
            )
        except TypeError as exc:
            raise smdp.exceptions.SmdpConfigError("invalid model settings {}: {}".format(dict(model_config), exc))

    def inference_config(self, mode: str, seed: typing.Optional[int] = None) -> smdp.inference.solver.InferenceConfig:
        section = self.section("inference")
        grid = self.grid()
        return smdp.inference.solver.InferenceConfig.from_dict({
            "mode": mode,
            "steps": grid.steps,
            "dt": grid.dt,
            "c": section.get("c"),
            "g_infer": section.get("g_infer"),
            "seed": self.seed if seed is None else int(seed),
            "t0": grid.t0,
        })

    def x_end_range(self) -> typing.Tuple[float, float]:
        low, high = self.section("inference").get("x_end_range", [-0.1, 0.1])
        if not float(low) <= float(high):
            raise smdp.exceptions.SmdpConfigError("inference.x_end_range must be increasing")
        return float(low), float(high)

    def eval_value(self, key: str, default: typing.Any = None) -> typing.Any:
        value = self.section("eval").get(key)
        return default if value is None else value

    def inference_value(self, key: str, default: typing.Any = None) -> typing.Any:
        value = self.section("inference").get(key)
        return default if value is None else value

    def sample_x_end(self, count: int, seed: typing.Optional[int] = None) -> np.ndarray:
        """End states ``x_T ~ U[x_end_range]`` for the toy evaluation, shape ``[count, 1]``."""
        low, high = self.x_end_range()
        rng = np.random.default_rng(np.random.SeedSequence([self.seed if seed is None else int(seed), 0xe7d]))
        return rng.uniform(low, high, size=(int(count), 1))
