"""
This submodule scores reconstructed initial states by simulating them
forward with the deterministic solver (noise disabled) and comparing the
resulting end states with the reference end states.
"""

import typing

import numpy as np

import smdp.autodiff.tensor
import smdp.exceptions
import smdp.sde.simulation


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "resimulate",
    "reconstruction_errors",
    "reconstruction_mse",
]


def resimulate(
        spec: smdp.sde.simulation.SdeSpec,
        x0: np.ndarray,
        grid: smdp.sde.simulation.TimeGrid,
) -> np.ndarray:
    """
    Applies the deterministic physics step ``grid.steps`` times to every row
    of :py:data:`x0` and returns the end states.

    :raises DivergenceError: if some state leaves the finite domain
    """
    x = smdp.autodiff.tensor.Tensor(np.asarray(x0, dtype=np.float64).reshape(-1, spec.dim))
    for m in range(grid.steps):
        with np.errstate(over="ignore", invalid="ignore"):
            x = spec.physics_step(x, grid.dt)
        smdp.sde.simulation.check_finite(x, step=m + 1, what="re-simulation")
    return x.numpy()


def reconstruction_errors(
        x0_hat: np.ndarray,
        x_end_ref: np.ndarray,
        spec: smdp.sde.simulation.SdeSpec,
        grid: smdp.sde.simulation.TimeGrid,
) -> np.ndarray:
    """Per-sample mean squared error between re-simulated and reference end states."""
    x_end_ref = np.asarray(x_end_ref, dtype=np.float64).reshape(-1, spec.dim)
    x0_hat = np.asarray(x0_hat, dtype=np.float64).reshape(-1, spec.dim)
    if x0_hat.shape != x_end_ref.shape:
        raise smdp.exceptions.ShapeError("reconstruction_mse", x0_hat.shape, x_end_ref.shape)
    if not np.all(np.isfinite(x0_hat)):
        raise smdp.exceptions.NonFiniteError(
            "reconstructed state is not finite", index=int(np.flatnonzero(~np.isfinite(x0_hat).all(axis=1))[0]))

    x_end = resimulate(spec, x0_hat, grid)
    return np.mean((x_end - x_end_ref) ** 2, axis=1)


def reconstruction_mse(
        x0_hat: np.ndarray,
        x_end_ref: np.ndarray,
        spec: smdp.sde.simulation.SdeSpec,
        grid: smdp.sde.simulation.TimeGrid,
) -> float:
    """
    Mean squared error between the noiseless forward simulation of
    :py:data:`x0_hat` and :py:data:`x_end_ref`, averaged over the batch.

    :raises DivergenceError: if the re-simulation diverges
    """
    return float(np.mean(reconstruction_errors(x0_hat, x_end_ref, spec, grid)))
