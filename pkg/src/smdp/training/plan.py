"""
This submodule describes training curricula: a :py:class:`TrainPlan` is a
sequence of :py:class:`Phase` objects, each with its own epochs, learning
rate (optionally decayed in steps), batch size, trajectory subsampling
stride and sliding-window schedule. It also builds the batches an epoch
iterates over.
"""

import typing

import loguru
import numpy as np

import smdp.exceptions
import smdp.sde.simulation


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "LOSS_ONE_STEP",
    "LOSS_MULTI_STEP",
    "LOSS_ISM",
    "LOSS_SSM_VR",
    "LOSS_DSM",
    "LOSS_KINDS",

    "Phase",
    "TrainPlan",
    "WindowBatch",
    "StateBatch",

    "subsample",
    "jittered_times",
    "iterate_windows",
    "iterate_states",
]


LOSS_ONE_STEP = "one-step"
LOSS_MULTI_STEP = "multi-step"
LOSS_ISM = "ism"
LOSS_SSM_VR = "ssm-vr"
LOSS_DSM = "dsm"

LOSS_KINDS: typing.List[str] = [LOSS_ONE_STEP, LOSS_MULTI_STEP, LOSS_ISM, LOSS_SSM_VR, LOSS_DSM]


logger = loguru.logger


class Phase(typing.NamedTuple):
    """
    One stage of a curriculum. The window size starts at :py:data:`window`
    and, when :py:data:`window_max` is set, grows by :py:data:`window_step`
    every :py:data:`window_every` epochs until it reaches
    :py:data:`window_max`. The learning rate is multiplied by
    :py:data:`decay_factor` every :py:data:`decay_every` epochs.
    """

    epochs: int
    lr: float
    batch_size: int
    stride: int = 1
    window: int = 2
    window_max: typing.Optional[int] = None
    window_step: int = 1
    window_every: int = 1
    decay_every: typing.Optional[int] = None
    decay_factor: float = 0.5

    @classmethod
    def from_dict(cls, value: typing.Dict[str, typing.Any]) -> "Phase":
        unknown = set(value.keys()) - set(cls._fields)
        if unknown:
            raise smdp.exceptions.SmdpConfigError(
                "unknown phase fields {}; expected among {}".format(sorted(unknown), list(cls._fields)))
        try:
            phase = cls(**value)
        except TypeError as exc:
            raise smdp.exceptions.SmdpConfigError("invalid phase {}: {}".format(value, exc))
        phase.validate()
        return phase

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return dict(self._asdict())

    def validate(self) -> None:
        if int(self.epochs) < 0:
            raise smdp.exceptions.SmdpConfigError("phase epochs must be nonnegative, got {}".format(self.epochs))
        if not float(self.lr) > 0:
            raise smdp.exceptions.SmdpConfigError("learning rate must be positive, got {}".format(self.lr))
        if int(self.batch_size) < 1:
            raise smdp.exceptions.SmdpConfigError("batch size must be positive, got {}".format(self.batch_size))
        if int(self.stride) < 1:
            raise smdp.exceptions.SmdpConfigError("stride must be positive, got {}".format(self.stride))
        if int(self.window) < 2 or (self.window_max is not None and int(self.window_max) < int(self.window)):
            raise smdp.exceptions.SmdpConfigError(
                "window sizes must satisfy 2 <= S <= S_max, got S={} S_max={}".format(self.window, self.window_max))
        if int(self.window_step) < 1 or int(self.window_every) < 1:
            raise smdp.exceptions.SmdpConfigError("window schedule increments must be positive")
        if self.decay_every is not None and int(self.decay_every) < 1:
            raise smdp.exceptions.SmdpConfigError("decay_every must be positive, got {}".format(self.decay_every))

    def window_at(self, epoch: int) -> int:
        if self.window_max is None:
            return int(self.window)
        grown = int(self.window) + (epoch // int(self.window_every)) * int(self.window_step)
        return min(int(self.window_max), grown)

    def lr_at(self, epoch: int) -> float:
        if self.decay_every is None:
            return float(self.lr)
        return float(self.lr) * float(self.decay_factor) ** (epoch // int(self.decay_every))

    @property
    def s_max(self) -> int:
        return int(self.window if self.window_max is None else self.window_max)


class TrainPlan(typing.NamedTuple):
    """
    A complete curriculum. :py:data:`reverse_physics` set to ``False``
    trains the network to learn the reverse physics together with the
    score (the reverse simulator is replaced by the identity).
    """

    phases: typing.Tuple[Phase, ...]
    loss: str = LOSS_MULTI_STEP
    seed: int = 0
    jitter: bool = False
    clip_norm: typing.Optional[float] = 10.0
    n_projections: int = 1
    dsm_sigma: typing.Optional[float] = None
    reverse_physics: bool = True

    @classmethod
    def from_dict(cls, value: typing.Dict[str, typing.Any]) -> "TrainPlan":
        value = dict(value)
        phases = value.pop("phases", None)
        if not phases:
            raise smdp.exceptions.SmdpConfigError("a training plan needs at least one phase")
        unknown = set(value.keys()) - set(cls._fields)
        if unknown:
            raise smdp.exceptions.SmdpConfigError(
                "unknown plan fields {}; expected among {}".format(sorted(unknown), list(cls._fields)))
        plan = cls(phases=tuple(Phase.from_dict(p) for p in phases), **value)
        plan.validate()
        return plan

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        value = dict(self._asdict())
        value["phases"] = [p.to_dict() for p in self.phases]
        return value

    def validate(self) -> None:
        if self.loss not in LOSS_KINDS:
            raise smdp.exceptions.SmdpConfigError(
                "unknown loss '{}', expected one of {}".format(self.loss, LOSS_KINDS))
        if int(self.n_projections) < 1:
            raise smdp.exceptions.SmdpConfigError("n_projections must be at least 1")
        for phase in self.phases:
            phase.validate()
            if self.loss != LOSS_MULTI_STEP and phase.s_max != 2:
                raise smdp.exceptions.SmdpConfigError(
                    "loss '{}' only supports window size 2, got S_max={}".format(self.loss, phase.s_max))

    @property
    def s_max(self) -> int:
        return max(phase.s_max for phase in self.phases)

    @property
    def total_epochs(self) -> int:
        return sum(int(phase.epochs) for phase in self.phases)

    def with_s_max(self, s_max: int) -> "TrainPlan":
        """
        Returns a copy in which every window schedule is capped at
        :py:data:`s_max` (the last phase is extended to reach it).
        """
        phases = []
        for (i, phase) in enumerate(self.phases):
            last = i == len(self.phases) - 1
            window = min(int(phase.window), int(s_max))
            window_max = phase.window_max
            if window_max is not None or last:
                window_max = int(s_max) if last else min(int(window_max), int(s_max))
            phases.append(phase._replace(window=window, window_max=window_max))
        return self._replace(phases=tuple(phases))


class WindowBatch(typing.NamedTuple):
    """
    Sub-trajectories ``x_{m:m+S-1}`` of shape ``[B, S, D]``, their times
    ``[B, S]`` and the step lengths ``[B, S-1]`` between consecutive states.
    """

    states: np.ndarray
    times: np.ndarray
    steps: np.ndarray

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def window(self) -> int:
        return self.states.shape[1]


class StateBatch(typing.NamedTuple):
    """Individual states ``[B, D]`` with their times ``[B]``."""

    states: np.ndarray
    times: np.ndarray


def subsample(
        dataset: smdp.sde.simulation.TrajectorySet,
        stride: int,
) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Keeps every :py:data:`stride`-th state of each trajectory; returns ``(states, times)``."""
    return dataset.states[:, ::stride], dataset.grid.times[::stride]


def jittered_times(times: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Draws ``t'_n ~ U(t_n - dt/2, t_n + dt/2)`` for the interior points of
    a regular discretization; the first and last times are kept.
    """
    jittered = np.array(times, dtype=np.float64)
    if jittered.size > 2:
        dt = times[1] - times[0]
        jittered[1:-1] += rng.uniform(-0.5 * dt, 0.5 * dt, size=jittered.size - 2)
    return jittered


def iterate_windows(
        dataset: smdp.sde.simulation.TrajectorySet,
        window: int,
        stride: int,
        batch_size: int,
        rng: np.random.Generator,
        jitter: bool = False,
) -> typing.Iterator[WindowBatch]:
    """
    Enumerates every window start ``m`` of every (subsampled) trajectory
    in a shuffled order and yields them in batches. When :py:data:`jitter`
    is set, each batch sees its own random time discretization.

    :raises SmdpConfigError: if the window is longer than the trajectories
    """
    states, times = subsample(dataset, stride)
    n, length, _ = states.shape
    starts = length - window + 1
    if starts < 1:
        raise smdp.exceptions.SmdpConfigError(
            "window S={} exceeds the {} states of the subsampled trajectories".format(window, length))

    order = rng.permutation(n * starts)
    offsets = np.arange(window)

    for begin in range(0, order.size, batch_size):
        chunk = order[begin:begin + batch_size]
        traj, start = np.divmod(chunk, starts)
        index = start[:, None] + offsets[None, :]

        batch_times = jittered_times(times, rng) if jitter else times
        window_times = batch_times[index]
        yield WindowBatch(
            states=states[traj[:, None], index],
            times=window_times,
            steps=np.diff(window_times, axis=1),
        )


def iterate_states(
        dataset: smdp.sde.simulation.TrajectorySet,
        stride: int,
        batch_size: int,
        rng: np.random.Generator,
) -> typing.Iterator[StateBatch]:
    """
    Yields shuffled batches of individual states at times ``t > t0`` (the
    score of the atomic initial distribution is undefined).
    """
    states, times = subsample(dataset, stride)
    states, times = states[:, 1:], times[1:]
    n, length, _ = states.shape

    order = rng.permutation(n * length)
    for begin in range(0, order.size, batch_size):
        chunk = order[begin:begin + batch_size]
        traj, m = np.divmod(chunk, length)
        yield StateBatch(states=states[traj, m], times=times[m])
