"""
This submodule defines the interface shared by all score representations
``s_theta(x, t)``, the parameter-free adapters (:py:class:`ZeroScore`,
:py:class:`AnalyticScore`), model construction by kind, and the extraction
of flat parameter gradients from a tape.
"""

import typing

import loguru
import numpy as np

import smdp.autodiff.tensor
import smdp.exceptions


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "MODEL_KIND_MLP",
    "MODEL_KIND_GRID",
    "MODEL_KIND_CONV",
    "MODEL_KIND_ZERO",
    "MODEL_KINDS",

    "ScoreModel",
    "ZeroScore",
    "AnalyticScore",

    "as_time_column",
    "init_model",
    "parameter_gradient",
]


MODEL_KIND_MLP = "mlp"
MODEL_KIND_GRID = "grid"
MODEL_KIND_CONV = "conv"
MODEL_KIND_ZERO = "zero"

MODEL_KINDS: typing.List[str] = [MODEL_KIND_MLP, MODEL_KIND_GRID, MODEL_KIND_CONV, MODEL_KIND_ZERO]


logger = loguru.logger

Tensor = smdp.autodiff.tensor.Tensor

TimeLike = typing.Union[float, np.ndarray, typing.Sequence[float]]


def as_time_column(t: TimeLike, batch: int) -> np.ndarray:
    """Broadcasts a scalar or per-sample time to an array of shape ``[batch]``."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if t.size == 1:
        return np.full(batch, float(t[0]))
    if t.size != batch:
        raise smdp.exceptions.ShapeError("time", t.shape, (batch,))
    return t


def _as_batch(x: smdp.autodiff.tensor.TensorLike, dim: int) -> Tensor:
    x = smdp.autodiff.tensor.as_tensor(x)
    if x.ndim == 1:
        x = x.reshape((1, x.shape[0]))
    if x.ndim != 2 or x.shape[1] != dim:
        raise smdp.exceptions.ShapeError("score input", x.shape, ("B", dim))
    return x


class ScoreModel:
    """
    Base class of the score representations. Parameters are immutable
    tensors held in a list; training replaces them wholesale with
    :py:meth:`set_parameters`, so a tape watching the current list sees
    every use made by :py:meth:`evaluate`.
    """

    kind: str = ""

    def __init__(self, dim: int, seed: int = 0):
        self.dim = int(dim)
        self.seed = int(seed)
        self.step = 0
        self._params: typing.List[Tensor] = []

    def __call__(self, x: smdp.autodiff.tensor.TensorLike, t: TimeLike) -> Tensor:
        return self.evaluate(x, t)

    def __repr__(self):
        return "{}(dim={}, parameters={}, seed={}, step={})".format(
            self.__class__.__name__, self.dim, self.parameter_count, self.seed, self.step)

    # parameters

    def parameters(self) -> typing.List[Tensor]:
        return list(self._params)

    def set_parameters(self, params: typing.Sequence[Tensor]) -> None:
        params = list(params)
        if len(params) != len(self._params):
            raise smdp.exceptions.ShapeError(
                "set_parameters", (len(self._params),), (len(params),))
        for (old, new) in zip(self._params, params):
            if old.shape != new.shape:
                raise smdp.exceptions.ShapeError("set_parameters", old.shape, new.shape)
        self._params = [smdp.autodiff.tensor.as_tensor(p) for p in params]

    @property
    def parameter_shapes(self) -> typing.List[typing.Tuple[int, ...]]:
        return [p.shape for p in self._params]

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self._params))

    def flat_parameters(self) -> np.ndarray:
        if not self._params:
            return np.zeros(0)
        return np.concatenate([p.data.reshape(-1) for p in self._params])

    def load_flat_parameters(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64).reshape(-1)
        if flat.size != self.parameter_count:
            raise smdp.exceptions.ShapeError("load_flat_parameters", (self.parameter_count,), flat.shape)
        params = []
        offset = 0
        for shape in self.parameter_shapes:
            size = int(np.prod(shape)) if shape else 1
            params.append(Tensor(flat[offset:offset + size].reshape(shape)))
            offset += size
        self._params = params

    def metadata(self) -> typing.Dict[str, typing.Any]:
        """Construction arguments, stored in checkpoints."""
        return {"dim": self.dim}

    # evaluation

    def evaluate(self, x: smdp.autodiff.tensor.TensorLike, t: TimeLike) -> Tensor:
        """
        Returns ``s_theta(x, t)`` for a batch ``x`` of shape ``[B, D]`` (a
        single state ``[D]`` is promoted to a batch of one).
        """
        x = _as_batch(x, self.dim)
        return self._forward(x, as_time_column(t, x.shape[0]))

    def jvp(
            self,
            x: smdp.autodiff.tensor.TensorLike,
            t: TimeLike,
            v: smdp.autodiff.tensor.TensorLike,
    ) -> typing.Tuple[Tensor, Tensor]:
        """
        Returns ``(s_theta(x, t), J v)`` where ``J`` is the Jacobian of
        ``s_theta`` with respect to ``x``; both outputs are recorded on the
        active tape so parameter gradients of Jacobian terms need only one
        reverse pass.
        """
        x = _as_batch(x, self.dim)
        v = _as_batch(v, self.dim)
        if v.shape != x.shape:
            raise smdp.exceptions.ShapeError("jvp", x.shape, v.shape)
        return self._forward_tangent(x, as_time_column(t, x.shape[0]), v)

    def _forward(self, x: Tensor, t: np.ndarray) -> Tensor:
        raise NotImplementedError

    def _forward_tangent(self, x: Tensor, t: np.ndarray, v: Tensor) -> typing.Tuple[Tensor, Tensor]:
        raise smdp.exceptions.SmdpConfigError(
            "model kind '{}' does not support input Jacobian-vector products".format(self.kind))


class ZeroScore(ScoreModel):
    """``s_theta = 0``: turns any solver into the reverse-physics-only baseline."""

    kind = MODEL_KIND_ZERO

    def _forward(self, x: Tensor, t: np.ndarray) -> Tensor:
        return x * 0.0

    def _forward_tangent(self, x: Tensor, t: np.ndarray, v: Tensor) -> typing.Tuple[Tensor, Tensor]:
        return x * 0.0, v * 0.0


class AnalyticScore(ScoreModel):
    """
    Wraps an analytic score ``f(x, t)`` (acting on numpy arrays) so that it
    can stand in for a trained model. Outputs are scaled by ``g(t)^2`` to
    follow the ``s_theta = g^2 grad log p`` identification.
    """

    kind = "analytic"

    def __init__(
            self,
            score: typing.Callable[[np.ndarray, np.ndarray], np.ndarray],
            dim: int = 1,
            diffusion: typing.Optional[typing.Callable[[float], float]] = None,
    ):
        super().__init__(dim=dim)
        self._score = score
        self._diffusion = diffusion

    def _scale(self, t: np.ndarray) -> np.ndarray:
        if self._diffusion is None:
            return np.ones_like(t)
        return np.array([self._diffusion(float(ti)) ** 2 for ti in t])

    def _forward(self, x: Tensor, t: np.ndarray) -> Tensor:
        values = np.asarray(self._score(x.data, t[:, None]), dtype=np.float64).reshape(x.shape)
        return Tensor(values * self._scale(t)[:, None])


def init_model(kind: str, dim: int, seed: int = 0, **kwargs) -> ScoreModel:
    """
    Builds a freshly initialized model of the given kind.

    :param kind: One of :py:data:`MODEL_KINDS`
    :param dim: State dimension ``D``
    :param seed: Seed of the parameter initialization
    :param kwargs: Architecture options forwarded to the model class

    :raises SmdpConfigError: on an unknown kind
    """
    import smdp.models.conv
    import smdp.models.grid
    import smdp.models.mlp

    if kind == MODEL_KIND_MLP:
        return smdp.models.mlp.MlpScore(dim=dim, seed=seed, **kwargs)
    if kind == MODEL_KIND_GRID:
        return smdp.models.grid.GridScore(dim=dim, seed=seed, **kwargs)
    if kind == MODEL_KIND_CONV:
        return smdp.models.conv.ConvScore2D(dim=dim, seed=seed, **kwargs)
    if kind == MODEL_KIND_ZERO:
        return ZeroScore(dim=dim, seed=seed)

    raise smdp.exceptions.SmdpConfigError(
        "unknown model kind '{}', expected one of {}".format(kind, MODEL_KINDS))


def parameter_gradient(
        model: ScoreModel,
        tape: smdp.autodiff.tensor.Tape,
        loss: Tensor,
) -> np.ndarray:
    """
    Runs the backward pass of :py:data:`loss` on :py:data:`tape` and returns
    the gradient with respect to every model parameter, flattened in
    parameter order. Parameters that the loss never touched get exact zeros.

    :raises NonFiniteError: naming the flat index of the first non-finite entry
    """
    grads = tape.backward(loss)
    pieces = []
    for p in model.parameters():
        g = grads.get(p.id)
        pieces.append(np.zeros(p.size) if g is None else g.data.reshape(-1))
    flat = np.concatenate(pieces) if pieces else np.zeros(0)

    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size > 0:
        raise smdp.exceptions.NonFiniteError(
            "non-finite parameter gradient at index {}".format(int(bad[0])),
            index=int(bad[0]),
        )
    return flat
