"""
This submodule solves inverse problems backward in time, from an end
state ``x_T`` to an estimate of ``x_0``, with a trained score. Three step
rules are available:

- ``ode``, the probability flow ODE: ``x + dt [P~^-1(x) + C s_theta(x, t)]``;
- ``sde``, the reverse-time SDE:
  ``x + dt [P~^-1(x) + C s_theta(x, t)] + sqrt(dt) g(t) z``;
- ``separated``, for deterministic systems: reverse physics, then a
  perturbation ``sqrt(dt) g z``, then a denoising step
  ``dt g^2 s_theta(x, t - dt)``.

Batches are solved together; sample ``n`` of a batch draws its noise from
``SeedSequence([seed, n])`` so results do not depend on batching or on the
number of workers. Divergent samples are truncated and flagged, never
retried.
"""

import math
import typing

import loguru
import numpy as np

import smdp.autodiff.tensor
import smdp.exceptions
import smdp.helpers.parallel
import smdp.metrics.reports
import smdp.models.base
import smdp.sde.simulation
import smdp.sde.storage


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "MODE_ODE",
    "MODE_SDE",
    "MODE_SEPARATED",
    "MODES",
    "DIAGNOSTIC_FIELDS",

    "InferenceConfig",
    "InferenceResult",
    "BatchInferenceResult",

    "reverse_step",
    "solve_inverse",
    "solve_inverse_batch",
    "posterior_sample",
    "write_inference",
    "write_diagnostics",
]


MODE_ODE = "ode"
MODE_SDE = "sde"
MODE_SEPARATED = "separated"

MODES: typing.List[str] = [MODE_ODE, MODE_SDE, MODE_SEPARATED]

DEFAULT_CORRECTION: typing.Dict[str, float] = {
    MODE_ODE: 1.0,
    MODE_SDE: 2.0,
    MODE_SEPARATED: 1.0,
}

DIAGNOSTIC_FIELDS: typing.List[str] = ["step", "t", "x_norm", "score_norm", "flag"]


logger = loguru.logger

Tensor = smdp.autodiff.tensor.Tensor


class InferenceConfig(typing.NamedTuple):
    """
    Settings of a backward solve over ``steps`` steps of size ``dt``,
    ending at ``t0``. ``c`` defaults to 2 for the reverse-time SDE and to 1
    otherwise. ``g_infer`` overrides the diffusion of the system; for the
    separated mode it defaults to 1, i.e. the perturbation
    ``sigma_t = sqrt(dt)`` used during denoising training.
    """

    mode: str
    steps: int
    dt: float
    c: typing.Optional[float] = None
    g_infer: typing.Optional[float] = None
    seed: int = 0
    t0: float = 0.0

    @classmethod
    def from_dict(cls, value: typing.Dict[str, typing.Any]) -> "InferenceConfig":
        unknown = set(value.keys()) - set(cls._fields)
        if unknown:
            raise smdp.exceptions.SmdpConfigError(
                "unknown inference fields {}; expected among {}".format(sorted(unknown), list(cls._fields)))
        try:
            config = cls(**value)
        except TypeError as exc:
            raise smdp.exceptions.SmdpConfigError("invalid inference settings {}: {}".format(value, exc))
        config.validate()
        return config

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return dict(self._asdict())

    def validate(self) -> None:
        if self.mode not in MODES:
            raise smdp.exceptions.SmdpConfigError(
                "unknown inference mode '{}', expected one of {}".format(self.mode, MODES))
        if int(self.steps) < 1:
            raise smdp.exceptions.SmdpConfigError("number of steps must be positive, got {}".format(self.steps))
        if not float(self.dt) > 0:
            raise smdp.exceptions.SmdpConfigError("inference requires dt > 0, got {}".format(self.dt))
        if self.c is not None and not float(self.c) > 0:
            raise smdp.exceptions.SmdpConfigError("correction factor C must be positive, got {}".format(self.c))
        if self.g_infer is not None and float(self.g_infer) < 0:
            raise smdp.exceptions.SmdpConfigError("g_infer must be nonnegative, got {}".format(self.g_infer))

    @property
    def correction(self) -> float:
        return float(self.c) if self.c is not None else DEFAULT_CORRECTION[self.mode]

    @property
    def t_end(self) -> float:
        return float(self.t0) + int(self.steps) * float(self.dt)

    @property
    def stochastic(self) -> bool:
        return self.mode != MODE_ODE

    def diffusion(self, spec: smdp.sde.simulation.SdeSpec, t: float) -> float:
        if self.g_infer is not None:
            return float(self.g_infer)
        if self.mode == MODE_SEPARATED:
            return 1.0
        return float(spec.diffusion(t))

    def times(self) -> np.ndarray:
        """The ``steps + 1`` times visited, from ``t_end`` down to ``t0`` exactly."""
        times = self.t_end - float(self.dt) * np.arange(int(self.steps) + 1)
        times[-1] = float(self.t0)
        return times


class InferenceResult(typing.NamedTuple):
    """
    One backward solution: ``trajectory[0]`` is the given end state and
    ``trajectory[m]`` the estimate at ``t_end - m dt``. When the solve
    diverged, the states from :py:data:`truncated_at` on are NaN.
    """

    trajectory: np.ndarray
    diagnostics: typing.List[typing.Dict[str, typing.Any]]
    diverged: bool
    truncated_at: typing.Optional[int]

    @property
    def endpoint(self) -> np.ndarray:
        return self.trajectory[-1]


class BatchInferenceResult(typing.NamedTuple):
    """
    Backward solutions of a batch: trajectories ``[B, M+1, D]``, the norms
    of the score evaluations ``[B, M]`` and, per sample, the index of the
    first divergent state (or ``-1``).
    """

    trajectories: np.ndarray
    score_norms: np.ndarray
    diverged_at: np.ndarray
    times: np.ndarray

    def __len__(self) -> int:
        return self.trajectories.shape[0]

    @property
    def endpoints(self) -> np.ndarray:
        return self.trajectories[:, -1]

    @property
    def diverged(self) -> np.ndarray:
        return self.diverged_at >= 0

    def result(self, index: int) -> InferenceResult:
        trajectory = self.trajectories[index]
        truncated_at = int(self.diverged_at[index]) if self.diverged_at[index] >= 0 else None

        diagnostics = []
        for step in range(trajectory.shape[0]):
            flag = truncated_at is not None and step >= truncated_at
            diagnostics.append({
                "step": step,
                "t": float(self.times[step]),
                "x_norm": float(np.linalg.norm(trajectory[step])),
                "score_norm": float(self.score_norms[index, step]) if step < self.score_norms.shape[1] else 0.0,
                "flag": int(flag),
            })

        return InferenceResult(
            trajectory=trajectory,
            diagnostics=diagnostics,
            diverged=truncated_at is not None,
            truncated_at=truncated_at,
        )

    def results(self) -> typing.List[InferenceResult]:
        return [self.result(i) for i in range(len(self))]


# =============================================================================


def _step(
        model: smdp.models.base.ScoreModel,
        spec: smdp.sde.simulation.SdeSpec,
        x: Tensor,
        t: float,
        dt: float,
        config: InferenceConfig,
        z: typing.Optional[np.ndarray],
) -> typing.Tuple[Tensor, Tensor]:
    g = config.diffusion(spec, t)

    if config.mode == MODE_SEPARATED:
        denoised = spec.reverse_physics_step(x, dt)
        noisy = denoised if z is None else denoised + Tensor(np.asarray(z) * (math.sqrt(dt) * g))
        score = model(noisy, t - dt)
        return noisy + score * (dt * g ** 2 * config.correction), score

    score = model(x, t)
    x_prev = spec.reverse_physics_step(x, dt) + score * (dt * config.correction)
    if config.mode == MODE_SDE and z is not None:
        x_prev = x_prev + Tensor(np.asarray(z) * (math.sqrt(dt) * g))
    return x_prev, score


def reverse_step(
        model: smdp.models.base.ScoreModel,
        spec: smdp.sde.simulation.SdeSpec,
        x: smdp.autodiff.tensor.TensorLike,
        t: float,
        dt: float,
        config: InferenceConfig,
        z: typing.Optional[smdp.autodiff.tensor.TensorLike] = None,
) -> Tensor:
    """
    Steps a batch of states from ``t`` to ``t - dt`` with the rule of
    ``config.mode``. The ODE ignores :py:data:`z`; the stochastic modes
    treat ``z=None`` as zero noise, so the SDE step with ``C = 1`` and no
    noise is exactly the ODE step.

    :raises SmdpConfigError: if :py:data:`dt` is not positive
    :raises DivergenceError: if the result is non-finite or too large
    """
    if not dt > 0:
        raise smdp.exceptions.SmdpConfigError("reverse stepping requires dt > 0, got {}".format(dt))
    x = smdp.autodiff.tensor.as_tensor(x)
    if x.ndim == 1:
        x = x.reshape((1, x.shape[0]))
    if z is not None:
        z = smdp.autodiff.tensor.as_tensor(z).numpy().reshape(x.shape)

    with np.errstate(over="ignore", invalid="ignore"):
        x_prev, _ = _step(model, spec, x, t, dt, config, z)
    return smdp.sde.simulation.check_finite(x_prev, what="reverse step")


def _sample_noise(config: InferenceConfig, dim: int, samples: typing.Sequence[int]) -> typing.Optional[np.ndarray]:
    if not config.stochastic:
        return None
    return np.stack([
        np.random.default_rng(np.random.SeedSequence([int(config.seed), int(n)])).standard_normal(
            (int(config.steps), dim))
        for n in samples
    ])


def _solve_rows(
        model: smdp.models.base.ScoreModel,
        spec: smdp.sde.simulation.SdeSpec,
        x_end: np.ndarray,
        config: InferenceConfig,
        noise: typing.Optional[np.ndarray],
) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    count = x_end.shape[0]
    steps = int(config.steps)
    times = config.times()

    trajectories = np.zeros((count, steps + 1, spec.dim))
    trajectories[:, 0] = x_end
    score_norms = np.zeros((count, steps))
    diverged_at = np.full(count, -1, dtype=np.int64)

    x = np.array(x_end)
    for m in range(steps):
        t = float(times[m])
        dt = t - float(times[m + 1])
        z = None if noise is None else noise[:, m]

        with np.errstate(over="ignore", invalid="ignore"):
            x_prev, score = _step(model, spec, Tensor(x), t, dt, config, z)
        x = x_prev.numpy()
        score_norms[:, m] = np.linalg.norm(score.numpy().reshape(count, -1), axis=1)

        with np.errstate(invalid="ignore"):
            bad = ~np.all(np.isfinite(x) & (np.abs(x) <= smdp.sde.simulation.DIVERGENCE_THRESHOLD), axis=1)
        fresh = bad & (diverged_at < 0)
        if np.any(fresh):
            diverged_at[fresh] = m + 1
        alive = diverged_at < 0
        # divergent rows continue at zero so they stay finite; their output is NaN
        x[~alive] = 0.0
        trajectories[:, m + 1] = x
        trajectories[~alive, m + 1] = np.nan
        score_norms[~alive & ~fresh, m] = np.nan

    return trajectories, score_norms, diverged_at


def solve_inverse_batch(
        model: smdp.models.base.ScoreModel,
        spec: smdp.sde.simulation.SdeSpec,
        x_end: np.ndarray,
        config: InferenceConfig,
        workers: int = 1,
        first_sample: int = 0,
) -> BatchInferenceResult:
    """
    Solves backward from each row of :py:data:`x_end` (shape ``[B, D]``).
    Sample ``b`` uses the noise stream ``first_sample + b``.

    :raises SmdpConfigError: on invalid settings or a non-finite end state
    """
    config.validate()
    x_end = np.asarray(x_end, dtype=np.float64).reshape(-1, spec.dim)
    if not np.all(np.isfinite(x_end)):
        raise smdp.exceptions.SmdpConfigError("end states must be finite")

    count = x_end.shape[0]
    shards = smdp.helpers.parallel.partition(count, workers)

    def _solve_shard(index: slice):
        noise = _sample_noise(config, spec.dim, range(first_sample + index.start, first_sample + index.stop))
        return _solve_rows(model, spec, x_end[index], config, noise)

    parts = smdp.helpers.parallel.parallel_map(_solve_shard, shards, workers=workers)

    result = BatchInferenceResult(
        trajectories=np.concatenate([p[0] for p in parts]),
        score_norms=np.concatenate([p[1] for p in parts]),
        diverged_at=np.concatenate([p[2] for p in parts]),
        times=config.times(),
    )

    n_diverged = int(np.sum(result.diverged))
    if n_diverged > 0:
        logger.warning("{} of {} {} trajectories diverged and were truncated.", n_diverged, count, config.mode)
    logger.debug("Solved {} trajectories backward in {} mode over {} steps.", count, config.mode, config.steps)

    return result


def solve_inverse(
        model: smdp.models.base.ScoreModel,
        spec: smdp.sde.simulation.SdeSpec,
        x_end: smdp.autodiff.tensor.TensorLike,
        config: InferenceConfig,
) -> InferenceResult:
    """
    Simulates backward in time from the end state :py:data:`x_end` with
    ``config.steps`` reverse steps. The ODE is a pure function of the
    model and ``x_end``; the stochastic modes are a pure function of
    ``(x_end, config.seed)``.
    """
    x_end = smdp.autodiff.tensor.as_tensor(x_end).numpy().reshape(1, spec.dim)
    return solve_inverse_batch(model, spec, x_end, config).result(0)


def posterior_sample(
        model: smdp.models.base.ScoreModel,
        spec: smdp.sde.simulation.SdeSpec,
        x_end: smdp.autodiff.tensor.TensorLike,
        config: InferenceConfig,
        n_samples: int,
        workers: int = 1,
) -> typing.List[InferenceResult]:
    """
    Draws :py:data:`n_samples` independent backward solutions from the same
    end state; sample ``n`` uses noise stream ``n``, so the first sample is
    the result of :py:func:`solve_inverse` with the same seed.

    :raises SmdpConfigError: if the mode is deterministic
    """
    if not config.stochastic:
        raise smdp.exceptions.SmdpConfigError(
            "posterior sampling needs a stochastic mode, got '{}'".format(config.mode))
    if int(n_samples) < 1:
        raise smdp.exceptions.SmdpConfigError("n_samples must be at least 1, got {}".format(n_samples))

    x_end = smdp.autodiff.tensor.as_tensor(x_end).numpy().reshape(1, spec.dim)
    batch = solve_inverse_batch(
        model, spec, np.repeat(x_end, int(n_samples), axis=0), config, workers=workers)
    return batch.results()


# =============================================================================


def write_inference(
        path: str,
        result: typing.Union[InferenceResult, BatchInferenceResult],
        config: InferenceConfig,
        spec_name: str = "",
) -> str:
    """
    Writes backward trajectories in the trajectory container format; the
    header grid starts at ``t_end`` with a negative step.
    """
    if isinstance(result, InferenceResult):
        states = result.trajectory[None]
    else:
        states = result.trajectories

    grid = smdp.sde.simulation.TimeGrid(t0=config.t_end, dt=-float(config.dt), steps=int(config.steps))
    sidecar = {
        "format": "smdp-inference",
        "version": smdp.sde.storage.CONTAINER_VERSION,
        "spec": spec_name,
        "inference": config.to_dict(),
        "shape": list(states.shape),
    }
    return smdp.sde.storage.write_states(path, states, grid, seed=int(config.seed), sidecar=sidecar)


def write_diagnostics(path: str, result: InferenceResult) -> str:
    """Writes the per-step diagnostics ``(step, t, ||x||, ||s_theta||, flag)`` as CSV."""
    return smdp.metrics.reports.write_csv(path, result.diagnostics, fields=DIAGNOSTIC_FIELDS)
