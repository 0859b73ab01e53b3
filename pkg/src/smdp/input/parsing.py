"""
This submodule parses experiment configuration documents (YAML, or JSON as
its subset) into validated sections. Each section is a dictionary that
declares its required and optional keys; unknown keys are rejected.
"""

import collections
import io
import json
import os
import textwrap
import typing

import jinja2
import yaml
import yaml.parser

import smdp.exceptions
import smdp.helpers.dict_serializer


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "SmdpJSONEncoder",
    "SmdpConfigSection",

    "SystemConfig",
    "DataConfig",
    "ModelConfig",
    "TrainConfig",
    "InferenceSectionConfig",
    "EvalConfig",
    "ExperimentSpecification",

    "ParsingException",
    "parse_specification",
]


class SmdpJSONEncoder(json.JSONEncoder):

    def default(self, obj):
        if isinstance(obj, collections.UserDict):
            return dict(obj)
        return smdp.helpers.dict_serializer.to_dict(obj)


def _flatten_fields(fields: typing.List[typing.Union[str, typing.List[str]]]) -> typing.List[str]:
    flat = []
    for field_or_fields in fields:
        if isinstance(field_or_fields, list):
            flat += field_or_fields
        else:
            flat.append(field_or_fields)
    return flat


class SmdpConfigSection(collections.UserDict):

    _required = []
    _optional = []
    _strict = True

    def __init__(self, value=None, **kwargs):
        value = dict(value or {})
        if not all(isinstance(key, str) for key in value.keys()):
            raise smdp.exceptions.SmdpConfigError(
                "configuration {} has non-string keys".format(self.__class__.__name__))
        super().__init__(value, **kwargs)
        self._validate_fields()

    def _validate_fields(self, **kwargs):

        # check required fields
        if self._required is not None:
            missing_required = []

            for field_or_fields in self._required:

                if type(field_or_fields) is str:
                    if field_or_fields not in self:
                        missing_required.append(field_or_fields)

                elif isinstance(field_or_fields, list):
                    if not any(field in self for field in field_or_fields):
                        missing_required.append(field_or_fields)

            if len(missing_required) > 0:
                raise smdp.exceptions.SmdpConfigError(
                    "{}: missing required fields: {}".format(self.__class__.__name__, missing_required)
                )

        # check there are no other fields if strict validation
        if self._strict:
            _possible_fields = _flatten_fields(self._required) + _flatten_fields(self._optional)
            for key in self.keys():
                if key not in _possible_fields:
                    raise smdp.exceptions.SmdpConfigError(
                        ("strict validation of configuration {cls}; "
                         "found field '{field}' not from: {expected}").format(
                            cls=self.__class__.__name__,
                            field=key,
                            expected=_possible_fields,
                        )
                    )

    def _repr_dict_(self) -> dict:
        return smdp.helpers.dict_serializer.to_dict(dict(self))


class SystemConfig(SmdpConfigSection):
    # toy-sde:       { "lambda1": 7, "lambda2": 0.03 }
    # affine-sde:    { "lam": 0.5, "g": 0.04 }
    # heat-equation: { "d": 16, "g": 0.1, "profile": "min-index", "alpha": 1.0, "grf_exponent": 4 }

    _required = []
    _optional = ["lambda1", "lambda2", "lam", "g", "d", "profile", "alpha", "grf_exponent"]


class DataConfig(SmdpConfigSection):
    # { "n": 2500, "dt": 0.02, "steps": 500, "fraction": 1.0, "test_n": 50 }

    _required = ["n", "dt", "steps"]
    _optional = ["t0", "fraction", "test_n", "chunk_size"]

    def __init__(self, value=None, **kwargs):
        super().__init__(value, **kwargs)

        if int(self["n"]) < 1:
            raise smdp.exceptions.SmdpConfigError("data.n must be positive, got {}".format(self["n"]))
        if not float(self["dt"]) > 0:
            raise smdp.exceptions.SmdpConfigError("data.dt must be positive, got {}".format(self["dt"]))
        if int(self["steps"]) < 1:
            raise smdp.exceptions.SmdpConfigError("data.steps must be positive, got {}".format(self["steps"]))
        fraction = float(self.get("fraction", 1.0))
        if not 0.0 < fraction <= 1.0:
            raise smdp.exceptions.SmdpConfigError("data.fraction must be in (0, 1], got {}".format(fraction))


class ModelConfig(SmdpConfigSection):
    # { "kind": "mlp", "widths": [30, 30, 25, 20, 10] }

    _required = ["kind"]
    _optional = ["widths", "filters", "blocks", "kernel", "final_kernel", "t_range", "x_range", "n_t", "n_x"]

    @property
    def options(self) -> typing.Dict[str, typing.Any]:
        """Architecture arguments forwarded to the model constructor."""
        options = {key: value for (key, value) in self.items() if key != "kind"}
        for key in ("widths", "t_range", "x_range"):
            if key in options:
                options[key] = tuple(options[key])
        return options


class TrainConfig(SmdpConfigSection):
    # { "loss": "multi-step", "phases": [ { "epochs": 10, "lr": 1e-3, ... } ], "jitter": false }

    _required = ["loss"]
    _optional = [
        "phases", "seed", "jitter", "clip_norm", "n_projections", "dsm_sigma", "reverse_physics", "workers",
    ]


class InferenceSectionConfig(SmdpConfigSection):
    # { "modes": ["ode", "sde"], "c": null, "n_trajectories": 1000, "x_end_range": [-0.1, 0.1] }

    _required = ["modes"]
    _optional = [
        "c", "g_infer", "n_trajectories", "x_end_range", "n_samples", "langevin_steps", "langevin_epsilon",
        "langevin_analytic",
    ]


class EvalConfig(SmdpConfigSection):
    # { "escape_bound": 1.25, "score_time": 1.0, "alpha": null, "g": null }

    _required = []
    _optional = ["escape_bound", "score_time", "alpha", "g", "plots", "tolerance", "s_max_values"]


class ExperimentSpecification(SmdpConfigSection):

    _required = ["experiment", "system", "data", "model", "train", "inference"]
    _optional = ["seed", "seeds", "out", "eval", "scale"]

    _sections: typing.Dict[str, typing.Type[SmdpConfigSection]] = {
        "system": SystemConfig,
        "data": DataConfig,
        "model": ModelConfig,
        "train": TrainConfig,
        "inference": InferenceSectionConfig,
        "eval": EvalConfig,
    }

    def __init__(self, value=None, **kwargs):
        value = dict(value or {})
        for (key, cls) in self._sections.items():
            if key in value and not isinstance(value[key], cls):
                if value[key] is not None and not isinstance(value[key], (dict, collections.UserDict)):
                    raise smdp.exceptions.SmdpConfigError(
                        "section '{}' must be a mapping, got {!r}".format(key, value[key]))
                value[key] = cls(dict(value[key] or {}))
        super().__init__(value, **kwargs)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return json.loads(json.dumps(dict(self), cls=SmdpJSONEncoder))


def _raw_parse_specification(
        stream: typing.Optional[io.TextIOBase] = None,
        contents: typing.Optional[str] = None,
        filename: typing.Optional[str] = None,
) -> typing.Optional[dict]:
    if stream is not None:
        try:
            stream.seek(0)
        except io.UnsupportedOperation:
            pass
        contents = stream.read()
        if isinstance(contents, bytes):
            contents = contents.decode("utf8")

    elif contents is not None:
        pass

    elif filename is not None and os.path.exists(filename):
        with open(filename, mode="r") as f:
            contents = f.read()

    elif filename is not None:
        raise smdp.exceptions.MissingArtifactError("configuration file '{}' does not exist".format(filename))

    else:
        # nothing is set
        raise smdp.exceptions.SmdpConfigError(
            "no valid input source provided: "
            "stream, filename, contents all `None`"
        )

    obj = yaml.safe_load(io.StringIO(contents))

    return obj


class ParsingException(smdp.exceptions.SmdpConfigError):

    _EXCEPTION_MESSAGE_TEMPLATE = textwrap.dedent(
        """
        configuration parsing error: {{ problem }}
          in "{{ filename }}", line {{ line }}, column {{ column }}
        """)[1:]

    def __init__(self, exc: yaml.YAMLError, filename: typing.Optional[str] = None):
        mark = getattr(exc, "problem_mark", None)
        self.problem = getattr(exc, "problem", None) or str(exc)
        self.filename = filename or (mark.name if mark is not None else "<string>")
        # marks are 0-based
        self.line = mark.line + 1 if mark is not None else 0
        self.column = mark.column + 1 if mark is not None else 0

        jinja_template = jinja2.Template(source=self._EXCEPTION_MESSAGE_TEMPLATE)
        super().__init__(jinja_template.render(
            problem=self.problem,
            filename=self.filename,
            line=self.line,
            column=self.column,
        ).strip())


def parse_specification(
        stream: typing.Optional[io.TextIOBase] = None,
        contents: typing.Optional[str] = None,
        filename: typing.Optional[str] = None,
) -> typing.Dict[str, typing.Any]:
    """
    Parses a configuration document into a nested dictionary; validation of
    the sections happens once defaults are merged in, see
    :py:class:`smdp.input.config.ExperimentConfig`.

    :raises ParsingException: on a YAML/JSON syntax error, with its position
    :raises SmdpConfigError: if the document is not a mapping
    """
    try:
        obj = _raw_parse_specification(
            stream=stream,
            contents=contents,
            filename=filename,
        )
    except yaml.YAMLError as exc:
        # will enhance message reporting
        raise ParsingException(exc, filename=filename)

    if obj is None:
        return dict()

    if not isinstance(obj, dict):
        raise smdp.exceptions.SmdpConfigError(
            "configuration must be a mapping at the top level, got {}".format(type(obj).__name__))

    return obj
