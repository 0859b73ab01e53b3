"""
This submodule compares a learned score field with an analytic one. The
model output is divided by ``g^2`` before the comparison, and the error is
weighted by the data density through Monte-Carlo samples of ``p_t``.
"""

import typing

import numpy as np

import smdp.autodiff.tensor
import smdp.exceptions
import smdp.models.base


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "score_field_error",
    "score_field_grid",
]


AnalyticScoreFunction = typing.Callable[[np.ndarray, float], np.ndarray]


def score_field_error(
        model: smdp.models.base.ScoreModel,
        analytic: AnalyticScoreFunction,
        samples: np.ndarray,
        t: float,
        diffusion: float,
        region: typing.Optional[typing.Tuple[float, float]] = None,
) -> float:
    """
    ``E_{x ~ p_t} [ (s_theta(x, t) / g^2 - grad log p_t(x))^2 ]`` estimated
    on :py:data:`samples` drawn from ``p_t``; samples outside the box
    :py:data:`region` are ignored.

    :raises SmdpConfigError: if ``t <= 0``, ``g = 0`` or no sample is left
    """
    if not t > 0:
        raise smdp.exceptions.SmdpConfigError("the score is undefined at t={} <= 0".format(t))
    if not diffusion > 0:
        raise smdp.exceptions.SmdpConfigError("score comparison needs g > 0, got {}".format(diffusion))

    x = np.asarray(samples, dtype=np.float64).reshape(-1, model.dim)
    if region is not None:
        lo, hi = region
        x = x[np.all((x >= lo) & (x <= hi), axis=1)]
    if x.shape[0] == 0:
        raise smdp.exceptions.SmdpConfigError("no sample inside the comparison region")

    learned = model(smdp.autodiff.tensor.Tensor(x), t).numpy() / float(diffusion) ** 2
    reference = np.asarray(analytic(x, t), dtype=np.float64).reshape(x.shape)
    return float(np.mean(np.sum((learned - reference) ** 2, axis=1)))


def score_field_grid(
        model: smdp.models.base.ScoreModel,
        times: np.ndarray,
        xs: np.ndarray,
        diffusion: typing.Optional[float] = None,
) -> np.ndarray:
    """
    Evaluates a one-dimensional model on the grid ``times x xs`` and returns
    an array ``[len(times), len(xs)]`` (divided by ``g^2`` when given), as
    plotted in score-field heatmaps.
    """
    if model.dim != 1:
        raise smdp.exceptions.SmdpConfigError("score field grids need a 1D model, got D={}".format(model.dim))
    xs = np.asarray(xs, dtype=np.float64).reshape(-1, 1)
    scale = 1.0 if diffusion is None else 1.0 / float(diffusion) ** 2
    return np.stack([
        model(smdp.autodiff.tensor.Tensor(xs), float(t)).numpy().reshape(-1) * scale
        for t in np.asarray(times, dtype=np.float64)
    ])
