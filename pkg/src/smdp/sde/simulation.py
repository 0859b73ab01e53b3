"""
This submodule defines physical systems as SDEs of the form
``dx = P(x) dt + g(t) dW``, simulates them forward with the
Euler-Maruyama method, and generates trajectory datasets.

Randomness is stream-split: trajectory slot ``n`` of a dataset draws its
initial state and its Brownian increments from
``SeedSequence([seed, n, attempt])``, so a dataset of ``N`` trajectories is
a literal prefix of any larger dataset generated with the same seed.
"""

import math
import typing

import loguru
import numpy as np
import tqdm

import smdp.autodiff.tensor
import smdp.exceptions
import smdp.sde.retry


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "DIVERGENCE_THRESHOLD",
    "EXACT_ERROR_TOLERANCE",

    "SdeSpec",
    "TimeGrid",
    "TrajectorySet",

    "scale_rows",
    "slot_rng",
    "check_finite",
    "euler_maruyama_step",
    "simulate",
    "simulate_batch",
    "generate_dataset",
    "strong_convergence_errors",
    "strong_convergence_order",
]


DIVERGENCE_THRESHOLD = 1e6

# strong errors below this fraction of the solution size are roundoff
EXACT_ERROR_TOLERANCE = 1e-12
"""
A state is divergent once any entry is non-finite or exceeds this
magnitude.
"""


logger = loguru.logger

Tensor = smdp.autodiff.tensor.Tensor

StateFunction = typing.Callable[[Tensor], Tensor]
SolverFunction = typing.Callable[[Tensor, typing.Union[float, np.ndarray]], Tensor]
Sampler = typing.Callable[[np.random.Generator, int], np.ndarray]
StepLike = typing.Union[float, np.ndarray]


class SdeSpec:
    """
    A physical system ``dx = P(x) dt + g(t) h(x) dW`` on ``R^D`` together
    with its reverse simulator ``P~^-1``.

    The drift and the reverse drift act on tensors whose last axis is the
    state dimension, so they can be evaluated on batches and recorded on a
    tape. Systems whose physics is a solver step rather than a drift (the
    spectral heat solver) provide :py:data:`forward_solver` and
    :py:data:`reverse_solver` instead; :py:meth:`physics_step` and
    :py:meth:`reverse_physics_step` dispatch accordingly.
    """

    def __init__(
            self,
            name: str,
            dim: int,
            drift: StateFunction,
            diffusion: typing.Callable[[float], float],
            reverse_drift: typing.Optional[StateFunction] = None,
            forward_solver: typing.Optional[SolverFunction] = None,
            reverse_solver: typing.Optional[SolverFunction] = None,
            noise_factor: typing.Optional[StateFunction] = None,
            exact_solution: typing.Optional[typing.Callable] = None,
            params: typing.Optional[typing.Dict[str, typing.Any]] = None,
    ):
        if dim < 1:
            raise smdp.exceptions.SmdpConfigError("SDE dimension must be positive, got {}".format(dim))
        if reverse_drift is None and reverse_solver is None:
            reverse_drift = _zero_drift

        self.name = name
        self.dim = int(dim)
        self.drift = drift
        self.diffusion = diffusion
        self.reverse_drift = reverse_drift
        self.forward_solver = forward_solver
        self.reverse_solver = reverse_solver
        self.noise_factor = noise_factor
        self.exact_solution = exact_solution
        self.params = dict(params or {})

    def __repr__(self):
        return "SdeSpec(name={!r}, dim={}, params={})".format(self.name, self.dim, self.params)

    @property
    def deterministic(self) -> bool:
        return self.diffusion(0.0) == 0.0

    def physics_step(self, x: Tensor, dt: StepLike) -> Tensor:
        """One deterministic forward step ``x + dt P(x)`` (or the solver step)."""
        if self.forward_solver is not None:
            return self.forward_solver(x, dt)
        return x + scale_rows(self.drift(x), dt)

    def reverse_physics_step(self, x: Tensor, dt: StepLike) -> Tensor:
        """One reverse step ``x + dt P~^-1(x)`` (or the reverse solver step)."""
        if self.reverse_solver is not None:
            return self.reverse_solver(x, dt)
        return x + scale_rows(self.reverse_drift(x), dt)

    def without_reverse_physics(self) -> "SdeSpec":
        """
        Returns a copy whose reverse simulator is the identity, for the
        variant in which the network learns physics and score together.
        """
        return SdeSpec(
            name=self.name,
            dim=self.dim,
            drift=self.drift,
            diffusion=self.diffusion,
            reverse_drift=_zero_drift,
            forward_solver=self.forward_solver,
            reverse_solver=None,
            noise_factor=self.noise_factor,
            exact_solution=self.exact_solution,
            params=dict(self.params, reverse_physics=False),
        )


def _zero_drift(x: Tensor) -> Tensor:
    return x * 0.0


def scale_rows(x: Tensor, dt: StepLike) -> Tensor:
    """
    Multiplies :py:data:`x` by a scalar step, or each row of a batch by its
    own step when :py:data:`dt` is an array of shape ``[B]``.
    """
    if np.ndim(dt) == 0:
        return x * float(dt)
    dt = np.asarray(dt, dtype=np.float64).reshape((-1,) + (1,) * (x.ndim - 1))
    return x * np.broadcast_to(dt, x.shape)


class TimeGrid(typing.NamedTuple):
    """Equally spaced times ``t_m = t0 + m dt`` for ``m = 0..steps``."""

    t0: float
    dt: float
    steps: int

    @classmethod
    def validated(cls, t0: float, dt: float, steps: int) -> "TimeGrid":
        if not dt > 0:
            raise smdp.exceptions.SmdpConfigError("time step must be positive, got {}".format(dt))
        if int(steps) < 1:
            raise smdp.exceptions.SmdpConfigError("number of steps must be positive, got {}".format(steps))
        return cls(t0=float(t0), dt=float(dt), steps=int(steps))

    @property
    def t_end(self) -> float:
        return self.t0 + self.steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    def time(self, m: int) -> float:
        return self.t0 + m * self.dt


class TrajectorySet:
    """
    ``N`` sampled trajectories on a fixed time grid, stored as an array of
    shape ``[N, M+1, D]``. Immutable after construction.
    """

    def __init__(
            self,
            grid: TimeGrid,
            states: np.ndarray,
            seed: int,
            spec_name: str = "",
            spec_params: typing.Optional[typing.Dict[str, typing.Any]] = None,
            retries: typing.Optional[typing.Dict[int, int]] = None,
    ):
        states = np.array(states, dtype=np.float64)
        if states.ndim != 3 or states.shape[1] != grid.steps + 1:
            raise smdp.exceptions.ShapeError("TrajectorySet", states.shape, ("N", grid.steps + 1, "D"))
        if not np.all(np.isfinite(states)):
            bad = np.argwhere(~np.isfinite(states))[0]
            raise smdp.exceptions.NonFiniteError(
                "trajectory set contains non-finite entries (first at {})".format(tuple(bad)),
                index=tuple(bad),
            )
        states.setflags(write=False)

        self._grid = grid
        self._states = states
        self._seed = int(seed)
        self._spec_name = spec_name
        self._spec_params = dict(spec_params or {})
        self._retries = dict(retries or {})

    def __len__(self) -> int:
        return self._states.shape[0]

    def __repr__(self):
        return "TrajectorySet(spec={!r}, N={}, M={}, D={}, seed={})".format(
            self._spec_name, self.n, self.m, self.dim, self._seed)

    @property
    def grid(self) -> TimeGrid:
        return self._grid

    @property
    def states(self) -> np.ndarray:
        return self._states

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def spec_name(self) -> str:
        return self._spec_name

    @property
    def spec_params(self) -> typing.Dict[str, typing.Any]:
        return dict(self._spec_params)

    @property
    def retries(self) -> typing.Dict[int, int]:
        return dict(self._retries)

    @property
    def n(self) -> int:
        return self._states.shape[0]

    @property
    def m(self) -> int:
        return self._states.shape[1] - 1

    @property
    def dim(self) -> int:
        return self._states.shape[2]

    @property
    def initial_states(self) -> np.ndarray:
        return self._states[:, 0]

    @property
    def end_states(self) -> np.ndarray:
        return self._states[:, -1]

    def head(self, count: int) -> "TrajectorySet":
        """The first :py:data:`count` trajectories (a literal prefix)."""
        count = max(1, min(int(count), self.n))
        return TrajectorySet(
            grid=self._grid,
            states=self._states[:count],
            seed=self._seed,
            spec_name=self._spec_name,
            spec_params=self._spec_params,
            retries={k: v for (k, v) in self._retries.items() if k < count},
        )

    def fraction(self, fraction: float) -> "TrajectorySet":
        """The prefix holding ``round(fraction * N)`` trajectories (at least one)."""
        return self.head(int(round(fraction * self.n)))


# =============================================================================


def slot_rng(seed: int, slot: int, attempt: int = 0) -> np.random.Generator:
    """Independent random stream of one trajectory slot (and retry attempt)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(slot), int(attempt)]))


def _divergent_rows(x: np.ndarray) -> np.ndarray:
    flat = x.reshape(x.shape[0], -1) if x.ndim > 1 else x.reshape(-1, 1)
    with np.errstate(invalid="ignore"):
        return ~np.all(np.isfinite(flat) & (np.abs(flat) <= DIVERGENCE_THRESHOLD), axis=1)


def check_finite(x: Tensor, step: typing.Optional[int] = None, what: str = "state") -> Tensor:
    """
    :raises DivergenceError: if any entry of :py:data:`x` is non-finite or
        exceeds :py:data:`DIVERGENCE_THRESHOLD` in magnitude
    """
    data = x.data
    with np.errstate(invalid="ignore"):
        bad = ~(np.isfinite(data) & (np.abs(data) <= DIVERGENCE_THRESHOLD))
    if np.any(bad):
        value = float(data[bad].flat[0])
        raise smdp.exceptions.DivergenceError(
            "{} diverged{} (value {})".format(what, "" if step is None else " at step {}".format(step), value),
            step=step,
            value=value,
        )
    return x


def _noise_term(spec: SdeSpec, x: Tensor, t: float, dt: float, z: smdp.autodiff.tensor.TensorLike) -> Tensor:
    scale = math.sqrt(dt) * spec.diffusion(t)
    z = smdp.autodiff.tensor.as_tensor(z)
    if spec.noise_factor is not None:
        return spec.noise_factor(x) * z * scale
    return z * scale


def euler_maruyama_step(
        spec: SdeSpec,
        x: smdp.autodiff.tensor.TensorLike,
        t: float,
        dt: float,
        z: smdp.autodiff.tensor.TensorLike,
        step: typing.Optional[int] = None,
) -> Tensor:
    """
    Returns ``x + dt P(x) + sqrt(dt) g(t) z``.

    :raises SmdpConfigError: if :py:data:`dt` is not positive (reverse
        stepping belongs to :py:mod:`smdp.inference.solver`)
    :raises DivergenceError: if the result is non-finite or too large
    """
    if not dt > 0:
        raise smdp.exceptions.SmdpConfigError("forward Euler-Maruyama requires dt > 0, got {}".format(dt))
    x = smdp.autodiff.tensor.as_tensor(x)
    with np.errstate(over="ignore", invalid="ignore"):
        result = spec.physics_step(x, dt) + _noise_term(spec, x, t, dt, z)
    return check_finite(result, step=step)


def simulate_batch(
        spec: SdeSpec,
        x0: np.ndarray,
        grid: TimeGrid,
        noise: np.ndarray,
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """
    Simulates a batch of trajectories with pre-drawn standard normal
    increments :py:data:`noise` of shape ``[N, M, D]``.

    Rows that diverge are frozen at zero from the divergent step on; the
    returned array ``diverged_at`` holds, per row, the first divergent step
    index (or ``-1``).

    :return: ``(states [N, M+1, D], diverged_at [N])``
    """
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1, spec.dim)
    count = x0.shape[0]
    states = np.zeros((count, grid.steps + 1, spec.dim))
    states[:, 0] = x0
    diverged_at = np.full(count, -1, dtype=np.int64)

    x = x0
    for m in range(grid.steps):
        t = grid.time(m)
        with np.errstate(over="ignore", invalid="ignore"):
            xt = Tensor(x)
            x = (spec.physics_step(xt, grid.dt) + _noise_term(spec, xt, t, grid.dt, noise[:, m])).numpy()
        bad = _divergent_rows(x) & (diverged_at < 0)
        if np.any(bad):
            diverged_at[bad] = m + 1
        x[diverged_at >= 0] = 0.0
        states[:, m + 1] = x

    return states, diverged_at


def simulate(
        spec: SdeSpec,
        x0: smdp.autodiff.tensor.TensorLike,
        grid: TimeGrid,
        seed: int,
) -> np.ndarray:
    """
    Simulates one trajectory of ``M+1`` states starting at :py:data:`x0`
    with i.i.d. normal increments from the stream of :py:data:`seed`.

    :raises DivergenceError: with the step index of the first divergent state
    """
    x0 = smdp.autodiff.tensor.as_tensor(x0).numpy().reshape(1, spec.dim)
    if not np.all(np.isfinite(x0)):
        raise smdp.exceptions.NonFiniteError("initial state must be finite")
    rng = slot_rng(seed, 0)
    noise = rng.standard_normal((1, grid.steps, spec.dim))
    states, diverged_at = simulate_batch(spec, x0, grid, noise)
    if diverged_at[0] >= 0:
        raise smdp.exceptions.DivergenceError(
            "trajectory diverged at step {}".format(diverged_at[0]),
            step=int(diverged_at[0]),
        )
    return states[0]


def _draw_slot(
        spec: SdeSpec,
        p0_sampler: Sampler,
        grid: TimeGrid,
        seed: int,
        slot: int,
        attempt: int,
) -> typing.Tuple[np.ndarray, np.ndarray]:
    rng = slot_rng(seed, slot, attempt)
    x0 = np.asarray(p0_sampler(rng, 1), dtype=np.float64).reshape(spec.dim)
    noise = rng.standard_normal((grid.steps, spec.dim))
    return x0, noise


def generate_dataset(
        spec: SdeSpec,
        p0_sampler: Sampler,
        n: int,
        grid: TimeGrid,
        seed: int,
        chunk_size: int = 500,
        progress: bool = False,
) -> TrajectorySet:
    """
    Generates :py:data:`n` independent trajectories; the result is a pure
    function of ``(spec, p0_sampler, n, grid, seed)``. Divergent slots are
    redrawn from fresh streams, at most
    :py:data:`smdp.sde.retry.MAX_TRIES_PER_SLOT` times per slot.

    :param p0_sampler: ``sampler(rng, count) -> [count, D]`` initial states
    :raises DivergenceError: if some slot keeps diverging
    """
    if int(n) < 1:
        raise smdp.exceptions.SmdpConfigError("dataset size must be at least 1, got {}".format(n))
    n = int(n)

    states = np.zeros((n, grid.steps + 1, spec.dim))
    retries: typing.Dict[int, int] = {}

    @smdp.sde.retry.divergence_retry
    def _simulate_slot(cursor: smdp.sde.retry.SlotAttempt) -> np.ndarray:
        x0, noise = _draw_slot(spec, p0_sampler, grid, seed, cursor.slot, cursor.attempt)
        traj, diverged_at = simulate_batch(spec, x0[None], grid, noise[None])
        if diverged_at[0] >= 0:
            raise smdp.exceptions.DivergenceError(
                "slot {} diverged at step {}".format(cursor.slot, diverged_at[0]),
                step=int(diverged_at[0]),
            )
        return traj[0]

    chunks = range(0, n, chunk_size)
    for start in tqdm.tqdm(chunks, desc="generate", disable=not progress, unit="chunk"):
        stop = min(n, start + chunk_size)
        draws = [_draw_slot(spec, p0_sampler, grid, seed, slot, 0) for slot in range(start, stop)]
        x0 = np.stack([d[0] for d in draws])
        noise = np.stack([d[1] for d in draws])
        chunk_states, diverged_at = simulate_batch(spec, x0, grid, noise)
        states[start:stop] = chunk_states

        for offset in np.flatnonzero(diverged_at >= 0):
            cursor = smdp.sde.retry.SlotAttempt(slot=start + int(offset), attempt=1)
            states[cursor.slot] = _simulate_slot(cursor)
            retries[cursor.slot] = cursor.attempt
            logger.debug("Slot {} regenerated after {} retries.", cursor.slot, cursor.attempt)

    logger.info(
        "Generated {} trajectories of {} steps for '{}' ({} slots retried).",
        n, grid.steps, spec.name, len(retries),
    )

    return TrajectorySet(
        grid=grid,
        states=states,
        seed=seed,
        spec_name=spec.name,
        spec_params=spec.params,
        retries=retries,
    )


# =============================================================================
# Strong convergence of Euler-Maruyama


def strong_convergence_errors(
        spec: SdeSpec,
        dts: typing.Sequence[float],
        x0: float = 1.0,
        t_end: float = 1.0,
        n_paths: int = 1000,
        refine: int = 16,
        seed: int = 0,
) -> np.ndarray:
    """
    Returns ``E|X_T - X^dt_T|`` for every step size in :py:data:`dts`, where
    ``X_T`` is the exact solution coupled to the Euler-Maruyama paths
    through the same Brownian increments. The Brownian path is sampled on
    a reference grid :py:data:`refine` times finer than the smallest step.
    Errors within :py:data:`EXACT_ERROR_TOLERANCE` of the mean solution
    size are reported as exactly 0.

    :raises SmdpConfigError: if the spec has no exact solution, or if a step
        size is not a multiple of the reference step
    """
    if spec.exact_solution is None:
        raise smdp.exceptions.SmdpConfigError("spec '{}' has no coupled exact solution".format(spec.name))

    h = min(dts) / refine
    fine_steps = int(round(t_end / h))
    if not math.isclose(fine_steps * h, t_end, rel_tol=1e-9):
        raise smdp.exceptions.SmdpConfigError("T={} is not a multiple of the reference step {}".format(t_end, h))

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5eed]))
    d_w = rng.standard_normal((n_paths, fine_steps, spec.dim)) * math.sqrt(h)
    exact = np.asarray(spec.exact_solution(x0, t_end, d_w, h)).reshape(n_paths, spec.dim)
    roundoff = EXACT_ERROR_TOLERANCE * max(1.0, float(np.mean(np.linalg.norm(exact, axis=1))))

    errors = []
    for dt in dts:
        factor = int(round(dt / h))
        if not math.isclose(factor * h, dt, rel_tol=1e-9):
            raise smdp.exceptions.SmdpConfigError("step {} is not a multiple of the reference step {}".format(dt, h))
        coarse = d_w.reshape(n_paths, fine_steps // factor, factor, spec.dim).sum(axis=2)
        x = Tensor(np.full((n_paths, spec.dim), float(x0)))
        for m in range(coarse.shape[1]):
            x = euler_maruyama_step(spec, x, m * dt, dt, coarse[:, m] / math.sqrt(dt), step=m + 1)
        err = float(np.mean(np.linalg.norm(x.data - exact, axis=1)))
        if err <= roundoff:
            err = 0.0
        logger.debug("Strong error at dt={}: {}", dt, err)
        errors.append(err)

    return np.asarray(errors)


def strong_convergence_order(
        spec: SdeSpec,
        dts: typing.Sequence[float],
        x0: float = 1.0,
        t_end: float = 1.0,
        n_paths: int = 1000,
        refine: int = 16,
        seed: int = 0,
) -> float:
    """
    Returns the least-squares slope of ``log E|X_T - X^dt_T|`` against
    ``log dt`` over the supplied step sizes.

    :raises SmdpConfigError: with fewer than three step sizes
    :raises NonFiniteError: if some error is exactly zero (slope undefined)
    """
    if len(dts) < 3:
        raise smdp.exceptions.SmdpConfigError(
            "at least 3 step sizes are needed to fit a convergence order, got {}".format(len(dts)))

    errors = strong_convergence_errors(
        spec=spec, dts=dts, x0=x0, t_end=t_end, n_paths=n_paths, refine=refine, seed=seed)

    if np.any(errors <= 0):
        raise smdp.exceptions.NonFiniteError("zero strong error; the scheme is exact for this spec")

    slope, _ = np.polyfit(np.log(np.asarray(dts, dtype=np.float64)), np.log(errors), 1)
    return float(slope)
