"""
This submodule contains the training objectives. All of them return a
scalar :py:class:`smdp.autodiff.tensor.Tensor` recorded on the active tape.

- :py:func:`one_step_loss` and :py:func:`multi_step_loss` roll the reverse
  update ``x + dt [P~^-1(x) + s_theta(x, t)]`` backward from the last state
  of a window and compare against the ground truth;
- :py:func:`ism_loss` and :py:func:`ssm_vr_loss` are implicit and sliced
  score matching, with Jacobian terms from forward tangents;
- :py:func:`denoising_sm_loss` is the separated physics/noise/denoise
  objective for deterministic systems.
"""

import math
import typing

import numpy as np

import smdp.autodiff.tensor
import smdp.exceptions
import smdp.models.base
import smdp.sde.simulation
import smdp.training.plan


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "reverse_update",
    "one_step_loss",
    "multi_step_loss",
    "ism_loss",
    "ssm_vr_loss",
    "denoising_sm_loss",
    "loss_floor",
]


Tensor = smdp.autodiff.tensor.Tensor


def reverse_update(
        model: smdp.models.base.ScoreModel,
        spec: smdp.sde.simulation.SdeSpec,
        x: Tensor,
        t: smdp.models.base.TimeLike,
        dt: smdp.sde.simulation.StepLike,
) -> Tensor:
    """``x + dt P~^-1(x) + dt s_theta(x, t)`` (solver form for spectral systems)."""
    return spec.reverse_physics_step(x, dt) + smdp.sde.simulation.scale_rows(model(x, t), dt)


def _check_loss(per_sample: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(per_sample))
    if bad.size > 0:
        raise smdp.exceptions.NonFiniteError(
            "{} is not finite for batch index {}".format(what, int(bad[0])), index=int(bad[0]))


def _rollout_loss(
        model: smdp.models.base.ScoreModel,
        spec: smdp.sde.simulation.SdeSpec,
        batch: smdp.training.plan.WindowBatch,
) -> Tensor:
    states = batch.states
    size, window, _ = states.shape

    prediction = Tensor(states[:, window - 1])
    total = None

    for j in range(window - 2, -1, -1):
        prediction = reverse_update(model, spec, prediction, batch.times[:, j + 1], batch.steps[:, j])
        try:
            smdp.sde.simulation.check_finite(prediction, step=window - 1 - j, what="rollout")
        except smdp.exceptions.DivergenceError as exc:
            raise smdp.exceptions.DivergenceError(
                "reverse rollout diverged after {} of {} steps".format(window - 1 - j, window - 1),
                step=exc.step,
                value=exc.value,
            )
        residual = Tensor(states[:, j]) - prediction
        term = smdp.autodiff.tensor.square(residual).reduce_sum(axis=-1)
        total = term if total is None else total + term

    _check_loss(total.data, "rollout loss")
    return total.reduce_sum() / size


def one_step_loss(
        model: smdp.models.base.ScoreModel,
        spec: smdp.sde.simulation.SdeSpec,
        x_prev: np.ndarray,
        x_next: np.ndarray,
        t_next: smdp.models.base.TimeLike,
        dt: smdp.sde.simulation.StepLike,
) -> Tensor:
    """
    Mean over the batch of
    ``|| x_m - x_{m+1} - dt [P~^-1(x_{m+1}) + s_theta(x_{m+1}, t_{m+1})] ||^2``.

    :raises NonFiniteError: naming the first batch index with a non-finite loss
    """
    x_prev = np.asarray(x_prev, dtype=np.float64)
    x_next = np.asarray(x_next, dtype=np.float64)
    size = x_prev.shape[0]
    t_next = smdp.models.base.as_time_column(t_next, size)
    steps = np.broadcast_to(np.asarray(dt, dtype=np.float64).reshape(-1, 1), (size, 1))

    batch = smdp.training.plan.WindowBatch(
        states=np.stack([x_prev, x_next], axis=1),
        times=np.stack([t_next - steps[:, 0], t_next], axis=1),
        steps=np.array(steps),
    )
    return _rollout_loss(model, spec, batch)


def multi_step_loss(
        model: smdp.models.base.ScoreModel,
        spec: smdp.sde.simulation.SdeSpec,
        batch: smdp.training.plan.WindowBatch,
) -> Tensor:
    """
    Predicts the window backward from its last state with ``S - 1``
    recursive reverse updates and returns the batch mean of the summed
    squared errors over the window. Gradients flow through every step; a
    window of two states gives exactly :py:func:`one_step_loss`.

    :raises DivergenceError: if the rollout leaves the finite domain
    """
    if batch.window < 2:
        raise smdp.exceptions.SmdpConfigError("window size must be at least 2, got {}".format(batch.window))
    return _rollout_loss(model, spec, batch)


def ism_loss(
        model: smdp.models.base.ScoreModel,
        x: np.ndarray,
        t: smdp.models.base.TimeLike,
) -> Tensor:
    """
    Mean over the batch of ``sum_i ds_i/dx_i + 1/2 ||s||^2``; the Jacobian
    diagonal takes one tangent pass per coordinate.
    """
    x = np.asarray(x, dtype=np.float64)
    size, dim = x.shape

    trace = None
    score = None
    for i in range(dim):
        basis = np.zeros_like(x)
        basis[:, i] = 1.0
        score, tangent = model.jvp(x, t, basis)
        diag = tangent.take(i, axis=-1)
        trace = diag if trace is None else trace + diag

    energy = smdp.autodiff.tensor.square(score).reduce_sum(axis=-1) * 0.5
    return (trace + energy).mean()


def ssm_vr_loss(
        model: smdp.models.base.ScoreModel,
        x: np.ndarray,
        t: smdp.models.base.TimeLike,
        rng: np.random.Generator,
        n_projections: int = 1,
) -> Tensor:
    """
    Sliced score matching with variance reduction: the batch mean of
    ``v^T (ds/dx) v + 1/2 ||s||^2`` with standard normal projections ``v``,
    averaged over :py:data:`n_projections` draws per sample.
    """
    if n_projections < 1:
        raise smdp.exceptions.SmdpConfigError("n_projections must be at least 1, got {}".format(n_projections))
    x = np.asarray(x, dtype=np.float64)

    directional = None
    score = None
    for _ in range(n_projections):
        v = rng.standard_normal(x.shape)
        score, tangent = model.jvp(x, t, v)
        term = (tangent * v).reduce_sum(axis=-1)
        directional = term if directional is None else directional + term

    energy = smdp.autodiff.tensor.square(score).reduce_sum(axis=-1) * 0.5
    return (directional / n_projections + energy).mean()


def denoising_sm_loss(
        model: smdp.models.base.ScoreModel,
        spec: smdp.sde.simulation.SdeSpec,
        x_prev: np.ndarray,
        x_next: np.ndarray,
        t_prev: smdp.models.base.TimeLike,
        dt: float,
        g_infer: float,
        z: np.ndarray,
) -> Tensor:
    """
    The separated update for a deterministic system: reverse physics
    ``x^ = x_{m+1} + dt P~^-1(x_{m+1})``, perturbation
    ``x^n = x^ + sqrt(dt) g z``, and the batch mean of
    ``|| x_m - x^n - dt g^2 s_theta(x^n, t_m) ||^2``.
    """
    x_prev = np.asarray(x_prev, dtype=np.float64)
    x_next = np.asarray(x_next, dtype=np.float64)
    size = x_prev.shape[0]

    denoised = spec.reverse_physics_step(Tensor(x_next), dt)
    noisy = Tensor(denoised.data + math.sqrt(dt) * g_infer * np.asarray(z, dtype=np.float64))

    residual = Tensor(x_prev) - noisy - model(noisy, t_prev) * (dt * g_infer ** 2)
    per_sample = smdp.autodiff.tensor.square(residual).reduce_sum(axis=-1)
    _check_loss(per_sample.data, "denoising loss")
    return per_sample.reduce_sum() / size


def loss_floor(spec: smdp.sde.simulation.SdeSpec, dt: float, window: int = 2, t: float = 0.0) -> float:
    """
    The irreducible part of the rollout loss: ``E || sqrt(dt) g z ||^2`` per
    reconstructed step, i.e. ``(S - 1) dt g^2 D``.
    """
    return float((window - 1) * dt * spec.diffusion(t) ** 2 * spec.dim)
