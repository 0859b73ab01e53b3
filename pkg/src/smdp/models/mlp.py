"""
This submodule contains :py:class:`MlpScore`, a fully connected network
taking the state and the raw time ``(x, t)`` as input, with elu hidden
activations and a linear output layer.
"""

import typing

import numpy as np

import smdp.autodiff.tensor
import smdp.models.base


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "DEFAULT_WIDTHS",
    "MlpScore",
]


DEFAULT_WIDTHS: typing.Tuple[int, ...] = (30, 30, 25, 20, 10)


Tensor = smdp.autodiff.tensor.Tensor


class MlpScore(smdp.models.base.ScoreModel):
    """
    ``(D + 1) -> widths... -> D``. Weights are drawn from
    ``uniform(-sqrt(1/fan_in), sqrt(1/fan_in))``, biases start at zero.

    Parameters are stored as ``[W_1, b_1, ..., W_L, b_L]`` with
    ``W_l`` of shape ``[fan_in, fan_out]``.
    """

    kind = smdp.models.base.MODEL_KIND_MLP

    def __init__(self, dim: int = 1, seed: int = 0, widths: typing.Sequence[int] = DEFAULT_WIDTHS):
        super().__init__(dim=dim, seed=seed)
        self.widths = tuple(int(w) for w in widths)

        rng = np.random.default_rng(np.random.SeedSequence([self.seed]))
        sizes = (self.dim + 1,) + self.widths + (self.dim,)

        for (fan_in, fan_out) in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(1.0 / fan_in)
            self._params.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out))))
            self._params.append(Tensor(np.zeros(fan_out)))

    def metadata(self) -> typing.Dict[str, typing.Any]:
        return {"dim": self.dim, "widths": list(self.widths)}

    def _layers(self) -> typing.List[typing.Tuple[Tensor, Tensor]]:
        return list(zip(self._params[0::2], self._params[1::2]))

    def _forward(self, x: Tensor, t: np.ndarray) -> Tensor:
        h = smdp.autodiff.tensor.concat([x, t[:, None]], axis=-1)
        layers = self._layers()
        for (w, b) in layers[:-1]:
            h = smdp.autodiff.tensor.elu(smdp.autodiff.tensor.add_bias(h @ w, b))
        w, b = layers[-1]
        return smdp.autodiff.tensor.add_bias(h @ w, b)

    def _forward_tangent(self, x: Tensor, t: np.ndarray, v: Tensor) -> typing.Tuple[Tensor, Tensor]:
        h = smdp.autodiff.tensor.concat([x, t[:, None]], axis=-1)
        dh = smdp.autodiff.tensor.concat([v, np.zeros((x.shape[0], 1))], axis=-1)
        layers = self._layers()
        for (w, b) in layers[:-1]:
            z = smdp.autodiff.tensor.add_bias(h @ w, b)
            dz = dh @ w
            h = smdp.autodiff.tensor.elu(z)
            dh = smdp.autodiff.tensor.elu_prime(z) * dz
        w, b = layers[-1]
        return smdp.autodiff.tensor.add_bias(h @ w, b), dh @ w
