"""
This submodule saves and restores score models. A checkpoint is the magic
``b"SMDPCKPT"``, a little-endian ``uint32`` header length, a JSON header
``{kind, metadata, shapes, seed, step, version}``, and the flat 64-bit
parameter array.
"""

import json
import os
import struct
import typing

import loguru
import numpy as np

import smdp.__version__
import smdp.exceptions
import smdp.models.base


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "CHECKPOINT_MAGIC",
    "save_checkpoint",
    "load_checkpoint",
    "read_checkpoint_header",
]


CHECKPOINT_MAGIC = b"SMDPCKPT"


logger = loguru.logger


def save_checkpoint(path: str, model: smdp.models.base.ScoreModel) -> str:
    if model.kind not in smdp.models.base.MODEL_KINDS:
        raise smdp.exceptions.SmdpConfigError("model kind '{}' cannot be checkpointed".format(model.kind))

    header = json.dumps({
        "kind": model.kind,
        "metadata": model.metadata(),
        "shapes": [list(shape) for shape in model.parameter_shapes],
        "seed": model.seed,
        "step": model.step,
        "version": smdp.__version__.__version__,
    }, sort_keys=True).encode("utf8")

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(model.flat_parameters().astype("<f8").tobytes())

    logger.debug("Saved {} checkpoint ({} parameters) to '{}'.", model.kind, model.parameter_count, path)
    return path


def _read(path: str) -> typing.Tuple[typing.Dict[str, typing.Any], np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()

    if not raw.startswith(CHECKPOINT_MAGIC):
        raise smdp.exceptions.SmdpConfigError("'{}' is not an SMDP checkpoint".format(path))

    offset = len(CHECKPOINT_MAGIC)
    (length,) = struct.unpack("<I", raw[offset:offset + 4])
    offset += 4
    header = json.loads(raw[offset:offset + length].decode("utf8"))
    offset += length

    flat = np.frombuffer(raw[offset:], dtype="<f8").astype(np.float64)
    return header, flat


def read_checkpoint_header(path: str) -> typing.Dict[str, typing.Any]:
    return _read(path)[0]


def load_checkpoint(path: str) -> smdp.models.base.ScoreModel:
    """
    :raises MissingArtifactError: if the file does not exist
    :raises SmdpConfigError: if the file is malformed
    """
    if not os.path.exists(path):
        raise smdp.exceptions.MissingArtifactError("checkpoint '{}' does not exist".format(path))

    header, flat = _read(path)
    metadata = dict(header.get("metadata", {}))
    dim = metadata.pop("dim")

    model = smdp.models.base.init_model(
        kind=header["kind"],
        dim=dim,
        seed=header.get("seed", 0),
        **metadata,
    )
    if [list(s) for s in model.parameter_shapes] != header.get("shapes"):
        raise smdp.exceptions.SmdpConfigError("checkpoint '{}' has inconsistent parameter shapes".format(path))

    model.load_flat_parameters(flat)
    model.step = int(header.get("step", 0))
    return model
