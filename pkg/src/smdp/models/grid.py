"""
This submodule contains :py:class:`GridScore`, a score field stored as
values at the cell centres of a rectangular ``time x space`` grid and
evaluated by bilinear interpolation. Queries outside the domain are
clamped to the boundary cells.
"""

import typing

import numpy as np

import smdp.autodiff.tensor
import smdp.exceptions
import smdp.models.base


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "GridScore",
]


Tensor = smdp.autodiff.tensor.Tensor


class GridScore(smdp.models.base.ScoreModel):

    kind = smdp.models.base.MODEL_KIND_GRID

    def __init__(
            self,
            dim: int = 1,
            seed: int = 0,
            t_range: typing.Sequence[float] = (0.0, 10.0),
            x_range: typing.Sequence[float] = (-1.25, 1.25),
            n_t: int = 500,
            n_x: int = 250,
    ):
        if dim != 1:
            raise smdp.exceptions.SmdpConfigError("GridScore only represents 1D states, got D={}".format(dim))
        if n_t < 2 or n_x < 2:
            raise smdp.exceptions.SmdpConfigError("grid needs at least 2 x 2 cells, got {} x {}".format(n_t, n_x))
        super().__init__(dim=dim, seed=seed)

        self.t_range = (float(t_range[0]), float(t_range[1]))
        self.x_range = (float(x_range[0]), float(x_range[1]))
        self.n_t = int(n_t)
        self.n_x = int(n_x)
        self.cell_t = (self.t_range[1] - self.t_range[0]) / self.n_t
        self.cell_x = (self.x_range[1] - self.x_range[0]) / self.n_x

        self._params.append(Tensor(np.zeros((self.n_t, self.n_x))))

    def metadata(self) -> typing.Dict[str, typing.Any]:
        return {
            "dim": self.dim,
            "t_range": list(self.t_range),
            "x_range": list(self.x_range),
            "n_t": self.n_t,
            "n_x": self.n_x,
        }

    @property
    def values(self) -> Tensor:
        return self._params[0]

    def cell_centers(self) -> typing.Tuple[np.ndarray, np.ndarray]:
        t = self.t_range[0] + (np.arange(self.n_t) + 0.5) * self.cell_t
        x = self.x_range[0] + (np.arange(self.n_x) + 0.5) * self.cell_x
        return t, x

    def _t_position(self, t: np.ndarray) -> np.ndarray:
        return (t - self.t_range[0]) / self.cell_t - 0.5

    def _x_position(self, x: Tensor) -> Tensor:
        return (x.reshape((-1,)) - self.x_range[0]) * (1.0 / self.cell_x) - 0.5

    def _forward(self, x: Tensor, t: np.ndarray) -> Tensor:
        out = smdp.autodiff.tensor.grid_interp(self.values, self._t_position(t), self._x_position(x))
        return out.reshape((-1, 1))

    def _forward_tangent(self, x: Tensor, t: np.ndarray, v: Tensor) -> typing.Tuple[Tensor, Tensor]:
        t_pos = self._t_position(t)
        x_pos = self._x_position(x)
        s = smdp.autodiff.tensor.grid_interp(self.values, t_pos, x_pos)
        slope = smdp.autodiff.tensor.grid_slope(self.values, t_pos, x_pos)
        ds = slope * (v.reshape((-1,)) * (1.0 / self.cell_x))
        return s.reshape((-1, 1)), ds.reshape((-1, 1))
