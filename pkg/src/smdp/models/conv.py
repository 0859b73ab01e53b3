"""
This submodule contains :py:class:`ConvScore2D`, an encoder-decoder
residual network for score fields on periodic ``d x d`` grids. The time is
appended to the input as a constant channel; all convolutions wrap around
the domain, so the output has the shape of the input field.
"""

import typing

import numpy as np

import smdp.autodiff.tensor
import smdp.exceptions
import smdp.models.base


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "LEAKY_SLOPE",
    "ConvScore2D",
]


LEAKY_SLOPE = 0.01


Tensor = smdp.autodiff.tensor.Tensor


class ConvScore2D(smdp.models.base.ScoreModel):
    """
    Layers, in order:

    - encoder: one convolution ``2 -> filters`` (kernel ``kernel``, no
      activation), ``blocks`` residual blocks (conv, LeakyReLU, conv,
      LeakyReLU), a ``1 x 1`` bottleneck to one channel;
    - decoder: one convolution ``1 -> filters``, ``blocks`` residual blocks,
      a final convolution ``filters -> 1`` with kernel ``final_kernel``.

    The decoder's stride-1 transposed convolutions are represented as
    periodic convolutions, which span the same function class.
    """

    kind = smdp.models.base.MODEL_KIND_CONV

    def __init__(
            self,
            dim: int = 256,
            seed: int = 0,
            filters: int = 8,
            blocks: int = 2,
            kernel: int = 4,
            final_kernel: int = 5,
    ):
        super().__init__(dim=dim, seed=seed)
        side = int(round(np.sqrt(dim)))
        if side * side != dim:
            raise smdp.exceptions.SmdpConfigError("ConvScore2D needs a square field, got D={}".format(dim))
        if filters < 1 or blocks < 0 or kernel < 1 or final_kernel < 1:
            raise smdp.exceptions.SmdpConfigError("invalid ConvScore2D architecture")

        self.side = side
        self.filters = int(filters)
        self.blocks = int(blocks)
        self.kernel = int(kernel)
        self.final_kernel = int(final_kernel)

        self._rng = np.random.default_rng(np.random.SeedSequence([self.seed]))
        self._add_conv(2, self.filters, self.kernel)
        for _ in range(2 * self.blocks):
            self._add_conv(self.filters, self.filters, self.kernel)
        self._add_conv(self.filters, 1, 1)
        self._add_conv(1, self.filters, self.kernel)
        for _ in range(2 * self.blocks):
            self._add_conv(self.filters, self.filters, self.kernel)
        self._add_conv(self.filters, 1, self.final_kernel)
        del self._rng

    def _add_conv(self, c_in: int, c_out: int, k: int) -> None:
        bound = np.sqrt(1.0 / (c_in * k * k))
        self._params.append(Tensor(self._rng.uniform(-bound, bound, size=(c_out, c_in, k, k))))
        self._params.append(Tensor(np.zeros(c_out)))

    def metadata(self) -> typing.Dict[str, typing.Any]:
        return {
            "dim": self.dim,
            "filters": self.filters,
            "blocks": self.blocks,
            "kernel": self.kernel,
            "final_kernel": self.final_kernel,
        }

    def _forward(self, x: Tensor, t: np.ndarray) -> Tensor:
        batch = x.shape[0]
        field = x.reshape((batch, 1, self.side, self.side))
        time = np.broadcast_to(t[:, None, None, None], (batch, 1, self.side, self.side))
        h = smdp.autodiff.tensor.concat([field, time], axis=1)

        convs = list(zip(self._params[0::2], self._params[1::2]))
        cursor = iter(convs)

        def conv(h: Tensor) -> Tensor:
            w, b = next(cursor)
            return smdp.autodiff.tensor.periodic_conv2d(h, w, b)

        def residual_stack(h: Tensor) -> Tensor:
            for _ in range(self.blocks):
                r = smdp.autodiff.tensor.leaky_relu(conv(h), LEAKY_SLOPE)
                r = smdp.autodiff.tensor.leaky_relu(conv(r), LEAKY_SLOPE)
                h = h + r
            return h

        h = residual_stack(conv(h))
        h = conv(h)
        h = residual_stack(conv(h))
        h = conv(h)

        return h.reshape((batch, self.dim))
