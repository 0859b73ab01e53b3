"""
This submodule reads and writes trajectory containers: a fixed binary
header followed by the row-major little-endian 64-bit states, plus a
human-readable JSON sidecar naming the generating system.

Header layout (``struct`` format ``<4sIQQQddq``): magic ``b"SMDP"``,
version, ``N``, ``M``, ``D``, ``t0``, ``dt``, ``seed``. The states array has
``N * (M+1) * D`` entries.
"""

import json
import os
import struct
import typing

import loguru
import numpy as np

import smdp.__version__
import smdp.exceptions
import smdp.sde.simulation


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "CONTAINER_MAGIC",
    "CONTAINER_VERSION",
    "HEADER_FORMAT",

    "sidecar_path",
    "write_trajectories",
    "read_trajectories",
    "write_states",
    "read_header",
]


CONTAINER_MAGIC = b"SMDP"

CONTAINER_VERSION = 1

HEADER_FORMAT = "<4sIQQQddq"

_HEADER_SIZE = struct.calcsize(HEADER_FORMAT)


logger = loguru.logger


class ContainerHeader(typing.NamedTuple):
    n: int
    m: int
    d: int
    t0: float
    dt: float
    seed: int


def sidecar_path(path: str) -> str:
    root, _ = os.path.splitext(path)
    return root + ".json"


def write_states(
        path: str,
        states: np.ndarray,
        grid: smdp.sde.simulation.TimeGrid,
        seed: int,
        sidecar: typing.Optional[typing.Dict[str, typing.Any]] = None,
) -> str:
    """
    Writes an ``[N, M+1, D]`` states array as a container, and its sidecar
    when :py:data:`sidecar` is given. Returns the container path.
    """
    states = np.ascontiguousarray(states, dtype="<f8")
    if states.ndim != 3 or states.shape[1] != grid.steps + 1:
        raise smdp.exceptions.ShapeError("write_states", states.shape, ("N", grid.steps + 1, "D"))

    header = struct.pack(
        HEADER_FORMAT,
        CONTAINER_MAGIC,
        CONTAINER_VERSION,
        states.shape[0],
        grid.steps,
        states.shape[2],
        grid.t0,
        grid.dt,
        int(seed),
    )

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(states.tobytes(order="C"))

    if sidecar is not None:
        with open(sidecar_path(path), "w") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True, default=str)

    logger.debug("Wrote container '{}' with shape {}.", path, states.shape)
    return path


def write_trajectories(path: str, trajectories: smdp.sde.simulation.TrajectorySet) -> str:
    sidecar = {
        "format": "smdp-trajectories",
        "version": CONTAINER_VERSION,
        "library_version": smdp.__version__.__version__,
        "spec": trajectories.spec_name,
        "params": trajectories.spec_params,
        "shape": list(trajectories.states.shape),
        "grid": {"t0": trajectories.grid.t0, "dt": trajectories.grid.dt, "steps": trajectories.grid.steps},
        "seed": trajectories.seed,
        "retries": {str(k): v for (k, v) in sorted(trajectories.retries.items())},
    }
    return write_states(
        path=path,
        states=trajectories.states,
        grid=trajectories.grid,
        seed=trajectories.seed,
        sidecar=sidecar,
    )


def read_header(path: str) -> ContainerHeader:
    """
    :raises SmdpConfigError: if the file is not an SMDP container of a
        supported version
    """
    with open(path, "rb") as f:
        raw = f.read(_HEADER_SIZE)

    if len(raw) != _HEADER_SIZE:
        raise smdp.exceptions.SmdpConfigError("'{}' is too short to be an SMDP container".format(path))

    magic, version, n, m, d, t0, dt, seed = struct.unpack(HEADER_FORMAT, raw)

    if magic != CONTAINER_MAGIC:
        raise smdp.exceptions.SmdpConfigError("'{}' has bad magic {!r}".format(path, magic))
    if version != CONTAINER_VERSION:
        raise smdp.exceptions.SmdpConfigError(
            "'{}' has container version {}, expected {}".format(path, version, CONTAINER_VERSION))

    return ContainerHeader(n=n, m=m, d=d, t0=t0, dt=dt, seed=seed)


def read_trajectories(path: str) -> smdp.sde.simulation.TrajectorySet:
    """
    Reads a container written by :py:func:`write_trajectories`; the sidecar
    is optional and only restores the system name and parameters.

    :raises SmdpConfigError: on a malformed container or truncated data
    """
    header = read_header(path)
    count = header.n * (header.m + 1) * header.d

    with open(path, "rb") as f:
        f.seek(_HEADER_SIZE)
        data = np.frombuffer(f.read(), dtype="<f8")

    if data.size != count:
        raise smdp.exceptions.SmdpConfigError(
            "'{}' holds {} values, header announces {}".format(path, data.size, count))

    meta = dict()
    if os.path.exists(sidecar_path(path)):
        with open(sidecar_path(path)) as f:
            meta = json.load(f)

    return smdp.sde.simulation.TrajectorySet(
        grid=smdp.sde.simulation.TimeGrid(t0=header.t0, dt=header.dt, steps=header.m),
        states=data.astype(np.float64).reshape(header.n, header.m + 1, header.d),
        seed=header.seed,
        spec_name=meta.get("spec", ""),
        spec_params=meta.get("params", {}),
        retries={int(k): v for (k, v) in meta.get("retries", {}).items()},
    )
