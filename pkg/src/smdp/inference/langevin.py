"""
This submodule refines states at a fixed time with Langevin dynamics,
``x <- x + eps grad log p_t(x) + sqrt(2 eps) z``, where the log-density
gradient is the model output divided by ``g(t)^2``.
"""

import math
import typing

import loguru
import numpy as np
import tqdm

import smdp.autodiff.tensor
import smdp.exceptions
import smdp.models.base
import smdp.sde.simulation


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "DEFAULT_EPSILON",
    "LangevinResult",
    "langevin_refine",
]


DEFAULT_EPSILON = 2e-5


logger = loguru.logger


class LangevinResult(typing.NamedTuple):
    states: np.ndarray
    diverged: np.ndarray

    @property
    def n_diverged(self) -> int:
        return int(np.sum(self.diverged))


def langevin_refine(
        model: smdp.models.base.ScoreModel,
        x: np.ndarray,
        t: float,
        epsilon: float = DEFAULT_EPSILON,
        n_steps: int = 1000,
        seed: int = 0,
        diffusion: typing.Optional[float] = None,
        progress: bool = False,
) -> LangevinResult:
    """
    Runs :py:data:`n_steps` Langevin iterations on every chain (row) of
    :py:data:`x` at time :py:data:`t`. The model output is divided by
    ``diffusion^2`` to obtain the score; pass ``diffusion=None`` when the
    model already returns ``grad log p`` (e.g. an unscaled analytic score).

    Chains that diverge are frozen and flagged.

    :raises SmdpConfigError: if :py:data:`epsilon` is not positive
    """
    if not epsilon > 0:
        raise smdp.exceptions.SmdpConfigError("Langevin step must be positive, got {}".format(epsilon))
    if diffusion is not None and not diffusion > 0:
        raise smdp.exceptions.SmdpConfigError("score scaling needs g > 0, got {}".format(diffusion))

    states = np.array(x, dtype=np.float64).reshape(-1, model.dim)
    scale = 1.0 if diffusion is None else 1.0 / float(diffusion) ** 2
    noise_scale = math.sqrt(2.0 * epsilon)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1a9]))
    diverged = np.zeros(states.shape[0], dtype=bool)

    for _ in tqdm.tqdm(range(int(n_steps)), desc="langevin", disable=not progress, unit="step"):
        score = model(smdp.autodiff.tensor.Tensor(states), t).numpy() * scale
        z = rng.standard_normal(states.shape)
        with np.errstate(over="ignore", invalid="ignore"):
            proposal = states + epsilon * score + noise_scale * z
            bad = ~np.all(
                np.isfinite(proposal) & (np.abs(proposal) <= smdp.sde.simulation.DIVERGENCE_THRESHOLD), axis=1)
        diverged |= bad
        states = np.where(diverged[:, None], states, proposal)

    if np.any(diverged):
        logger.warning("{} of {} Langevin chains diverged.", int(np.sum(diverged)), states.shape[0])

    return LangevinResult(states=states, diverged=diverged)
