"""
This submodule contains the one-dimensional systems: the quadratic toy
SDE ``dx = -lambda1 sign(x) x^2 dt + lambda2 dW`` whose posterior is
bimodal, and the affine SDE ``dx = -lambda x dt + g dW`` whose score is
known in closed form.
"""

import math
import typing

import numpy as np

import smdp.autodiff.tensor
import smdp.exceptions
import smdp.sde.simulation


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "TOY_STARTING_POINTS",
    "POSTERIOR_WINDOW",

    "QuadraticDrift1D",
    "AffineDrift1D",
    "MultiplicativeAffine1D",

    "binary_initial_sampler",
    "analytic_score_affine",
    "toy_posterior_reference",
]


TOY_STARTING_POINTS: typing.Tuple[float, float] = (-1.0, 1.0)

POSTERIOR_WINDOW = 0.1
"""
Half-width of the window of end states around 0 for which the posterior
over starting points is treated as balanced.
"""


Tensor = smdp.autodiff.tensor.Tensor


def binary_initial_sampler(rng: np.random.Generator, count: int) -> np.ndarray:
    """Draws ``count`` initial states from ``{-1, +1}`` with equal probability."""
    return rng.choice(np.asarray(TOY_STARTING_POINTS), size=(count, 1))


class QuadraticDrift1D:
    """
    The toy system ``P(x) = -lambda1 sign(x) x^2`` with constant diffusion
    ``lambda2``. Its reverse simulator is ``P~^-1(x) = lambda1 sign(x) x^2``.
    """

    def __init__(self, lambda1: float = 7.0, lambda2: float = 0.03):
        if not lambda1 > 0:
            raise smdp.exceptions.SmdpConfigError("lambda1 must be positive, got {}".format(lambda1))
        if lambda2 < 0:
            raise smdp.exceptions.SmdpConfigError("lambda2 must be nonnegative, got {}".format(lambda2))
        self.lambda1 = float(lambda1)
        self.lambda2 = float(lambda2)

    def __repr__(self):
        return "QuadraticDrift1D(lambda1={}, lambda2={})".format(self.lambda1, self.lambda2)

    def _signed_square(self, x: Tensor) -> Tensor:
        return smdp.autodiff.tensor.sign(x) * smdp.autodiff.tensor.square(x)

    def drift(self, x: Tensor) -> Tensor:
        return self._signed_square(x) * (-self.lambda1)

    def reverse_drift(self, x: Tensor) -> Tensor:
        return self._signed_square(x) * self.lambda1

    def diffusion(self, t: float) -> float:
        return self.lambda2

    def spec(self) -> smdp.sde.simulation.SdeSpec:
        return smdp.sde.simulation.SdeSpec(
            name="toy-sde",
            dim=1,
            drift=self.drift,
            diffusion=self.diffusion,
            reverse_drift=self.reverse_drift,
            params={"lambda1": self.lambda1, "lambda2": self.lambda2},
        )


class AffineDrift1D:
    """
    The affine system ``P(x) = -lambda x`` with constant diffusion ``g``.
    Started from a point ``x0`` its marginal at time ``t`` is Gaussian with
    mean ``x0 exp(-lambda t)`` and variance
    ``g^2 / (2 lambda) (1 - exp(-2 lambda t))``.
    """

    def __init__(self, lam: float = 0.5, g: float = 0.04):
        if lam < 0:
            raise smdp.exceptions.SmdpConfigError("lambda must be nonnegative, got {}".format(lam))
        if g < 0:
            raise smdp.exceptions.SmdpConfigError("g must be nonnegative, got {}".format(g))
        self.lam = float(lam)
        self.g = float(g)

    def __repr__(self):
        return "AffineDrift1D(lam={}, g={})".format(self.lam, self.g)

    def drift(self, x: Tensor) -> Tensor:
        return x * (-self.lam)

    def reverse_drift(self, x: Tensor) -> Tensor:
        return x * self.lam

    def diffusion(self, t: float) -> float:
        return self.g

    def mean(self, t: float, x0: float) -> float:
        return x0 * math.exp(-self.lam * t)

    def variance(self, t: float) -> float:
        if self.lam == 0.0:
            return self.g ** 2 * t
        return self.g ** 2 / (2.0 * self.lam) * (1.0 - math.exp(-2.0 * self.lam * t))

    def mixture_variance(self, t: float) -> float:
        """Variance of the marginal at ``t`` when started from ``{-1, +1}``."""
        return self.mean(t, 1.0) ** 2 + self.variance(t)

    def exact_solution(self, x0: float, t_end: float, d_w: np.ndarray, h: float) -> np.ndarray:
        """
        The solution at :py:data:`t_end` driven by Brownian increments
        :py:data:`d_w` of shape ``[paths, steps, 1]`` on a grid of step ``h``,
        via the Ito sum of the variation-of-constants formula.
        """
        steps = d_w.shape[1]
        left = h * np.arange(steps)
        weights = np.exp(-self.lam * (t_end - left))
        return x0 * math.exp(-self.lam * t_end) + self.g * np.einsum("k,pkd->pd", weights, d_w)

    def spec(self) -> smdp.sde.simulation.SdeSpec:
        return smdp.sde.simulation.SdeSpec(
            name="affine-sde",
            dim=1,
            drift=self.drift,
            diffusion=self.diffusion,
            reverse_drift=self.reverse_drift,
            exact_solution=self.exact_solution,
            params={"lambda": self.lam, "g": self.g},
        )


class MultiplicativeAffine1D(AffineDrift1D):
    """
    The affine system with multiplicative noise ``dx = -lambda x dt + g x dW``
    (geometric Brownian motion), whose exact solution
    ``x0 exp((-lambda - g^2/2) t + g W_t)`` depends on the whole path only
    through ``W_t``. Euler-Maruyama converges at strong order 1/2 on it.
    """

    def __init__(self, lam: float = 0.5, g: float = 1.0):
        super().__init__(lam=lam, g=g)

    def __repr__(self):
        return "MultiplicativeAffine1D(lam={}, g={})".format(self.lam, self.g)

    def noise_factor(self, x: Tensor) -> Tensor:
        return x

    def exact_solution(self, x0: float, t_end: float, d_w: np.ndarray, h: float) -> np.ndarray:
        w_end = d_w.sum(axis=1)
        return x0 * np.exp((-self.lam - 0.5 * self.g ** 2) * t_end + self.g * w_end)

    def spec(self) -> smdp.sde.simulation.SdeSpec:
        return smdp.sde.simulation.SdeSpec(
            name="multiplicative-affine-sde",
            dim=1,
            drift=self.drift,
            diffusion=self.diffusion,
            reverse_drift=self.reverse_drift,
            noise_factor=self.noise_factor,
            exact_solution=self.exact_solution,
            params={"lambda": self.lam, "g": self.g},
        )


def analytic_score_affine(
        system: AffineDrift1D,
        x: typing.Union[float, np.ndarray],
        t: float,
        x0s: typing.Sequence[float] = TOY_STARTING_POINTS,
        weights: typing.Optional[typing.Sequence[float]] = None,
) -> typing.Union[float, np.ndarray]:
    """
    Returns ``d/dx log p_t(x)`` for the Gaussian mixture reached from the
    atomic initial distribution on :py:data:`x0s` (equal weights by
    default): the responsibility-weighted average of the component scores
    ``(mu(t; x0) - x) / sigma^2(t)``.

    :raises SmdpConfigError: if ``t <= 0`` (the score of an atomic
        distribution is undefined)
    """
    if not t > 0:
        raise smdp.exceptions.SmdpConfigError("the analytic score requires t > 0, got {}".format(t))
    variance = system.variance(t)
    if not variance > 0:
        raise smdp.exceptions.SmdpConfigError("the analytic score requires a positive variance (g > 0)")

    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=np.float64)

    x0s = np.asarray(x0s, dtype=np.float64)
    if weights is None:
        weights = np.full(x0s.shape, 1.0 / x0s.size)
    weights = np.asarray(weights, dtype=np.float64)

    means = x0s * math.exp(-system.lam * t)
    diff = means - x[..., None]
    log_comp = np.log(weights) - 0.5 * diff ** 2 / variance
    log_comp = log_comp - log_comp.max(axis=-1, keepdims=True)
    resp = np.exp(log_comp)
    resp = resp / resp.sum(axis=-1, keepdims=True)

    score = (resp * diff).sum(axis=-1) / variance
    return float(score) if scalar else score


def toy_posterior_reference(x_end: float, window: float = POSTERIOR_WINDOW) -> typing.Dict[float, float]:
    """
    The ground-truth posterior over starting points for end states near 0:
    uniform over ``{-1, +1}``.

    :raises SmdpConfigError: if ``|x_end| > window``
    """
    if abs(x_end) > window:
        raise smdp.exceptions.SmdpConfigError(
            "end state {} outside the balanced window [-{w}, {w}]".format(x_end, w=window))
    return {x0: 1.0 / len(TOY_STARTING_POINTS) for x0 in TOY_STARTING_POINTS}
