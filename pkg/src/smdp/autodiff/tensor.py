"""
This submodule provides :py:class:`Tensor`, an immutable dense array of
64-bit reals, and :py:class:`Tape`, a recorder of primitive operations
that supports reverse-mode automatic differentiation.

A tape is activated as a context manager; while active, every primitive
whose inputs depend on a watched leaf is appended to the tape together
with its vector-Jacobian product. Tapes are thread-local, so parallel
workers each own their tape and sum gradients afterwards.

.. code-block:: python

    with smdp.autodiff.tensor.Tape() as tape:
        tape.watch(x)
        loss = (x * x).reduce_sum()
    grads = tape.backward(loss)   # {x.id: Tensor(2 * x)}
"""

import itertools
import threading
import typing

import loguru
import numpy as np

import smdp.exceptions


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "Tensor",
    "Tape",
    "TensorLike",

    "as_tensor",
    "current_tape",
    "record",
    "backward",
    "grad",

    "PRIMITIVES",
]


logger = loguru.logger

TensorLike = typing.Union["Tensor", np.ndarray, float, int, typing.Sequence]

VjpFunction = typing.Callable[[np.ndarray], typing.Tuple[typing.Optional[np.ndarray], ...]]

_id_counter = itertools.count()

_tape_state = threading.local()


class Tensor:
    """
    An immutable dense n-dimensional array of 64-bit reals. Instances are
    values: operations never modify them, so they may be shared between
    threads freely. Each tensor has a unique :py:attr:`id` that tapes use to
    identify leaves and intermediate results.
    """

    __slots__ = ("_data", "_id")

    def __init__(self, data: TensorLike):
        if isinstance(data, Tensor):
            data = data._data
        array = np.array(data, dtype=np.float64)
        array.setflags(write=False)
        self._data = array
        self._id = next(_id_counter)

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        # internal constructor for freshly computed arrays (no copy)
        obj = cls.__new__(cls)
        array = np.asarray(array, dtype=np.float64)
        array.setflags(write=False)
        obj._data = array
        obj._id = next(_id_counter)
        return obj

    @classmethod
    def zeros(cls, shape: typing.Tuple[int, ...]) -> "Tensor":
        return cls._wrap(np.zeros(shape))

    @property
    def id(self) -> int:
        return self._id

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the underlying array."""
        return self._data

    @property
    def shape(self) -> typing.Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        """Returns a writable copy of the data."""
        return np.array(self._data)

    def item(self) -> float:
        if self._data.size != 1:
            raise smdp.exceptions.ShapeError("item", self.shape, ())
        return float(self._data.reshape(()))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self._data)))

    def __repr__(self) -> str:
        return "<Tensor #{} shape={} {}>".format(self._id, self.shape, np.array2string(self._data, threshold=8))

    def __len__(self) -> int:
        return len(self._data)

    # arithmetic sugar; scalars dispatch to the scalar primitives

    def __add__(self, other: TensorLike) -> "Tensor":
        if _is_scalar(other):
            return record("scalar_add", self, c=float(other))
        return record("add", self, as_tensor(other))

    def __radd__(self, other: TensorLike) -> "Tensor":
        return self.__add__(other)

    def __sub__(self, other: TensorLike) -> "Tensor":
        if _is_scalar(other):
            return record("scalar_add", self, c=-float(other))
        return record("sub", self, as_tensor(other))

    def __rsub__(self, other: TensorLike) -> "Tensor":
        if _is_scalar(other):
            return record("scalar_add", record("scalar_mul", self, c=-1.0), c=float(other))
        return record("sub", as_tensor(other), self)

    def __mul__(self, other: TensorLike) -> "Tensor":
        if _is_scalar(other):
            return record("scalar_mul", self, c=float(other))
        return record("mul", self, as_tensor(other))

    def __rmul__(self, other: TensorLike) -> "Tensor":
        return self.__mul__(other)

    def __truediv__(self, other: float) -> "Tensor":
        if not _is_scalar(other):
            raise TypeError("only division by a Python scalar is supported")
        return record("scalar_mul", self, c=1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return record("scalar_mul", self, c=-1.0)

    def __matmul__(self, other: TensorLike) -> "Tensor":
        return record("matmul", self, as_tensor(other))

    # method sugar

    def reduce_sum(self, axis: typing.Optional[int] = None) -> "Tensor":
        return record("reduce_sum", self, axis=axis)

    def mean(self, axis: typing.Optional[int] = None) -> "Tensor":
        return record("mean", self, axis=axis)

    def square(self) -> "Tensor":
        return record("square", self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return record("reshape", self, shape=tuple(shape))

    def take(self, index: typing.Union[int, typing.Sequence[int]], axis: int = -1) -> "Tensor":
        return record("take", self, index=index, axis=axis)


def _is_scalar(value: typing.Any) -> bool:
    return isinstance(value, (int, float, np.floating, np.integer)) and not isinstance(value, bool)


def as_tensor(value: TensorLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


# =============================================================================
# Tape


class _Node(typing.NamedTuple):
    op: str
    inputs: typing.Tuple[int, ...]
    output: int
    vjp: VjpFunction


def current_tape() -> typing.Optional["Tape"]:
    stack = getattr(_tape_state, "stack", None)
    if not stack:
        return None
    return stack[-1]


class Tape:
    """
    An ordered record of primitive operations. Nodes are appended in
    execution order, so the record is topologically sorted by construction;
    :py:meth:`backward` visits each node exactly once, in reverse.

    A tape is meant to be rebuilt for every loss evaluation.
    """

    def __init__(self):
        self._nodes: typing.List[_Node] = []
        self._leaves: typing.Dict[int, typing.Tuple[int, ...]] = {}
        self._tracked: typing.Set[int] = set()

    def __enter__(self) -> "Tape":
        stack = getattr(_tape_state, "stack", None)
        if stack is None:
            stack = []
            _tape_state.stack = stack
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> bool:
        _tape_state.stack.pop()
        return False

    def watch(self, *tensors: Tensor) -> typing.Tuple[Tensor, ...]:
        """Marks tensors as differentiable leaves of this tape."""
        for tensor in tensors:
            if not isinstance(tensor, Tensor):
                raise TypeError("can only watch Tensor objects, got {}".format(type(tensor)))
            self._leaves[tensor.id] = tensor.shape
            self._tracked.add(tensor.id)
        return tensors

    @property
    def nodes(self) -> typing.List[_Node]:
        return list(self._nodes)

    @property
    def leaf_ids(self) -> typing.Set[int]:
        return set(self._leaves.keys())

    def is_tracked(self, tensor: Tensor) -> bool:
        return tensor.id in self._tracked

    def _append(self, op: str, inputs: typing.Sequence[Tensor], output: Tensor, vjp: VjpFunction) -> None:
        self._nodes.append(_Node(
            op=op,
            inputs=tuple(t.id for t in inputs),
            output=output.id,
            vjp=vjp,
        ))
        self._tracked.add(output.id)

    def backward(self, output: Tensor) -> typing.Dict[int, Tensor]:
        """
        Returns the gradient of the scalar :py:data:`output` with respect
        to every leaf of this tape, as a mapping from leaf id to tensor.
        Gradients over fan-out are summed; leaves that do not influence the
        output receive exact zeros.

        :raises TapeError: if the output is not scalar or was not produced
            under this tape
        """
        if output.size != 1 or output.ndim > 1:
            raise smdp.exceptions.TapeError(
                "backward() requires a scalar output, got shape {}".format(output.shape))

        if output.id not in self._tracked:
            raise smdp.exceptions.TapeError(
                "output tensor #{} was not recorded on this tape".format(output.id))

        grads: typing.Dict[int, np.ndarray] = {output.id: np.ones(output.shape)}

        for node in reversed(self._nodes):
            upstream = grads.pop(node.output, None) if node.output not in self._leaves else grads.get(node.output)
            if upstream is None:
                continue
            input_grads = node.vjp(upstream)
            for (input_id, input_grad) in zip(node.inputs, input_grads):
                if input_grad is None or input_id not in self._tracked:
                    continue
                if input_id in grads:
                    grads[input_id] = grads[input_id] + input_grad
                else:
                    grads[input_id] = input_grad

        return {
            leaf_id: Tensor._wrap(grads[leaf_id] if leaf_id in grads else np.zeros(shape))
            for (leaf_id, shape) in self._leaves.items()
        }


def backward(tape: Tape, output: Tensor) -> typing.Dict[int, Tensor]:
    return tape.backward(output)


def grad(
        f: typing.Callable[..., Tensor],
        *params: Tensor,
) -> typing.Tuple[Tensor, typing.List[Tensor]]:
    """
    Evaluates ``f(*params)`` under a fresh tape and returns the value
    together with the gradient with respect to each parameter.
    """
    with Tape() as tape:
        tape.watch(*params)
        value = f(*params)
    grads = tape.backward(value)
    return value, [grads[p.id] for p in params]


# =============================================================================
# Primitives
#
# Each primitive receives input arrays and keyword parameters and returns
# (output array, vjp), where vjp maps the upstream gradient to one gradient
# per input (None when an input is not differentiable).


def _unbroadcast(g: np.ndarray, shape: typing.Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    # scalar operand broadcast against a tensor
    return np.asarray(g.sum()).reshape(shape)


def _check_elementwise(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise smdp.exceptions.ShapeError(op, a.shape, b.shape)


def _add(a, b):
    _check_elementwise("add", a, b)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def _sub(a, b):
    _check_elementwise("sub", a, b)
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


def _mul(a, b):
    _check_elementwise("mul", a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _scalar_mul(a, c: float):
    return a * c, lambda g: (g * c,)


def _scalar_add(a, c: float):
    return a + c, lambda g: (g,)


def _matmul(a, b):
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise smdp.exceptions.ShapeError("matmul", a.shape, b.shape)

    def vjp(g):
        if b.ndim == 1:
            return np.outer(g, b), a.T @ g
        return g @ b.T, a.T @ g

    return a @ b, vjp


def _add_bias(a, b):
    if b.ndim != 1 or a.shape[-1:] != b.shape:
        raise smdp.exceptions.ShapeError("add_bias", a.shape, b.shape)
    return a + b, lambda g: (g, g.reshape(-1, b.shape[0]).sum(axis=0))


def _reduce_sum(a, axis: typing.Optional[int] = None):
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
    return np.sum(a, axis=axis), vjp


def _mean(a, axis: typing.Optional[int] = None):
    count = a.size if axis is None else a.shape[axis]
    out, vjp_sum = _reduce_sum(a, axis=axis)
    return out / count, lambda g: (vjp_sum(g)[0] / count,)


def _square(a):
    return a * a, lambda g: (2.0 * a * g,)


def _abs(a):
    return np.abs(a), lambda g: (np.sign(a) * g,)


def _sign(a):
    # sign(0) := 0; derivative 0 everywhere (including the discontinuity)
    return np.sign(a), lambda g: (np.zeros_like(a),)


def _exp(a):
    out = np.exp(a)
    return out, lambda g: (out * g,)


def _tanh(a):
    out = np.tanh(a)
    return out, lambda g: ((1.0 - out * out) * g,)


def _elu(a):
    neg = np.expm1(np.minimum(a, 0.0))
    out = np.where(a > 0, a, neg)
    return out, lambda g: (np.where(a > 0, 1.0, neg + 1.0) * g,)


def _elu_prime(a):
    # d/dx elu(x) = 1 (x > 0), exp(x) (x <= 0); second derivative 0 resp. exp(x)
    e = np.exp(np.minimum(a, 0.0))
    out = np.where(a > 0, 1.0, e)
    return out, lambda g: (np.where(a > 0, 0.0, e) * g,)


def _leaky_relu(a, slope: float = 0.01):
    factor = np.where(a > 0, 1.0, slope)
    return a * factor, lambda g: (factor * g,)


def _reshape(a, shape: typing.Tuple[int, ...]):
    try:
        out = a.reshape(shape)
    except ValueError:
        raise smdp.exceptions.ShapeError("reshape", a.shape, tuple(shape))
    return out, lambda g: (g.reshape(a.shape),)


def _take(a, index, axis: int = -1):
    out = np.take(a, index, axis=axis)

    def vjp(g):
        result = np.zeros_like(a)
        moved = np.moveaxis(result, axis, 0)
        g_moved = np.moveaxis(g, axis, 0) if np.ndim(index) > 0 else g
        np.add.at(moved, index, g_moved)
        return (result,)

    return out, vjp


def _concat(*arrays, axis: int = -1):
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError:
        raise smdp.exceptions.ShapeError("concat", *[x.shape for x in arrays])
    sizes = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return out, lambda g: tuple(np.split(g, sizes, axis=axis))


def _grid_cells(positions: np.ndarray, count: int) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # clamp to [0, count-1]; lower cell index stays <= count-2 so that a
    # query exactly on the last node has fraction 1 on the upper cell
    clamped = np.clip(positions, 0.0, count - 1.0)
    inside = (positions > 0.0) & (positions < count - 1.0)
    lower = np.minimum(np.floor(clamped), count - 2).astype(np.int64)
    return lower, clamped - lower, inside


def _grid_interp(values, t_pos, x_pos):
    """
    Bilinear interpolation of a node table ``values[T, X]`` at fractional
    node coordinates; coordinates outside the table are clamped.
    """
    if values.ndim != 2 or t_pos.shape != x_pos.shape:
        raise smdp.exceptions.ShapeError("grid_interp", values.shape, t_pos.shape, x_pos.shape)
    n_t, n_x = values.shape
    i0, a, _ = _grid_cells(t_pos, n_t)
    j0, b, x_inside = _grid_cells(x_pos, n_x)
    i1, j1 = i0 + 1, j0 + 1

    v00, v01 = values[i0, j0], values[i0, j1]
    v10, v11 = values[i1, j0], values[i1, j1]
    out = (1 - a) * (1 - b) * v00 + (1 - a) * b * v01 + a * (1 - b) * v10 + a * b * v11

    def vjp(g):
        g_values = np.zeros_like(values)
        np.add.at(g_values, (i0, j0), (1 - a) * (1 - b) * g)
        np.add.at(g_values, (i0, j1), (1 - a) * b * g)
        np.add.at(g_values, (i1, j0), a * (1 - b) * g)
        np.add.at(g_values, (i1, j1), a * b * g)
        slope = (1 - a) * (v01 - v00) + a * (v11 - v10)
        g_x = np.where(x_inside, slope, 0.0) * g
        return g_values, None, g_x

    return out, vjp


def _grid_slope(values, t_pos, x_pos):
    """
    Derivative of :py:func:`_grid_interp` along the second axis, in node
    units. Piecewise constant in ``x_pos``; zero where the query is clamped.
    """
    n_t, n_x = values.shape
    i0, a, _ = _grid_cells(t_pos, n_t)
    j0, _, x_inside = _grid_cells(x_pos, n_x)
    i1, j1 = i0 + 1, j0 + 1
    mask = np.where(x_inside, 1.0, 0.0)
    out = mask * ((1 - a) * (values[i0, j1] - values[i0, j0]) + a * (values[i1, j1] - values[i1, j0]))

    def vjp(g):
        g_values = np.zeros_like(values)
        w = mask * g
        np.add.at(g_values, (i0, j1), (1 - a) * w)
        np.add.at(g_values, (i0, j0), -(1 - a) * w)
        np.add.at(g_values, (i1, j1), a * w)
        np.add.at(g_values, (i1, j0), -a * w)
        return g_values, None, None

    return out, vjp


def _spectral_multiply(a, multiplier: np.ndarray):
    """
    Real part of ``ifft2(multiplier * fft2(a))`` over the last two axes; the
    multiplier is either one table ``[H, W]`` or one table per leading index;
    the vector-Jacobian product applies the conjugate multiplier.
    """
    if multiplier.shape != a.shape[-2:] and multiplier.shape != a.shape:
        raise smdp.exceptions.ShapeError("spectral_multiply", a.shape, multiplier.shape)
    out = np.real(np.fft.ifft2(multiplier * np.fft.fft2(a)))
    conj = np.conj(multiplier)
    return out, lambda g: (np.real(np.fft.ifft2(conj * np.fft.fft2(g))),)


def _conv_offsets(kernel: int) -> np.ndarray:
    return np.arange(kernel) - (kernel - 1) // 2


def _periodic_patches(x: np.ndarray, kernel: int) -> np.ndarray:
    # x [B, C, H, W] -> [B, C*k*k, H*W] with wrap-around indexing
    offsets = _conv_offsets(kernel)
    batch, channels, height, width = x.shape
    rolled = np.stack([
        np.stack([np.roll(x, shift=(-p, -q), axis=(2, 3)) for q in offsets])
        for p in offsets
    ])
    return rolled.transpose(2, 3, 0, 1, 4, 5).reshape(batch, channels * kernel * kernel, height * width)


def _periodic_conv2d(x, weight, bias):
    """
    Stride-1 convolution with periodic boundaries: ``x[B, C, H, W]``,
    ``weight[O, C, k, k]``, ``bias[O]`` -> ``[B, O, H, W]``.
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1] or bias.shape != weight.shape[:1]:
        raise smdp.exceptions.ShapeError("periodic_conv2d", x.shape, weight.shape, bias.shape)
    batch, channels, height, width = x.shape
    out_channels, _, kernel, _ = weight.shape
    patches = _periodic_patches(x, kernel)
    w_mat = weight.reshape(out_channels, -1)
    out = np.einsum("ok,bkn->bon", w_mat, patches) + bias[None, :, None]

    def vjp(g):
        g_mat = g.reshape(batch, out_channels, height * width)
        g_weight = np.einsum("bon,bkn->ok", g_mat, patches).reshape(weight.shape)
        g_bias = g_mat.sum(axis=(0, 2))
        g_patches = np.einsum("ok,bon->bkn", w_mat, g_mat).reshape(batch, channels, kernel, kernel, height, width)
        offsets = _conv_offsets(kernel)
        g_x = np.zeros_like(x)
        for (pi, p) in enumerate(offsets):
            for (qi, q) in enumerate(offsets):
                g_x += np.roll(g_patches[:, :, pi, qi], shift=(p, q), axis=(2, 3))
        return g_x, g_weight, g_bias

    return out.reshape(batch, out_channels, height, width), vjp


PRIMITIVES: typing.Dict[str, typing.Callable] = {
    "add": _add,
    "sub": _sub,
    "mul": _mul,
    "scalar_mul": _scalar_mul,
    "scalar_add": _scalar_add,
    "matmul": _matmul,
    "add_bias": _add_bias,
    "reduce_sum": _reduce_sum,
    "mean": _mean,
    "square": _square,
    "abs": _abs,
    "sign": _sign,
    "exp": _exp,
    "tanh": _tanh,
    "elu": _elu,
    "elu_prime": _elu_prime,
    "leaky_relu": _leaky_relu,
    "reshape": _reshape,
    "take": _take,
    "concat": _concat,
    "grid_interp": _grid_interp,
    "grid_slope": _grid_slope,
    "spectral_multiply": _spectral_multiply,
    "periodic_conv2d": _periodic_conv2d,
}
"""
Registry of the differentiable primitives, by name. Every entry takes
input arrays plus keyword parameters and returns ``(output, vjp)``.
"""


def record(op: str, *inputs: TensorLike, **params) -> Tensor:
    """
    Applies the primitive :py:data:`op` to :py:data:`inputs` and, when a
    tape is active and any input depends on one of its leaves, appends the
    operation to that tape.

    :raises ShapeError: on incompatible input shapes (both shapes reported)
    """
    primitive = PRIMITIVES.get(op)
    if primitive is None:
        raise KeyError("unknown primitive '{}'".format(op))

    tensors = [as_tensor(x) for x in inputs]
    out_array, vjp = primitive(*[t.data for t in tensors], **params)
    output = Tensor._wrap(out_array)

    tape = current_tape()
    if tape is not None and any(tape.is_tracked(t) for t in tensors):
        tape._append(op, tensors, output, vjp)

    return output


# functional aliases


def add(a: TensorLike, b: TensorLike) -> Tensor:
    return record("add", a, b)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    return record("sub", a, b)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    return record("mul", a, b)


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    return record("matmul", a, b)


def add_bias(a: TensorLike, b: TensorLike) -> Tensor:
    return record("add_bias", a, b)


def reduce_sum(a: TensorLike, axis: typing.Optional[int] = None) -> Tensor:
    return record("reduce_sum", a, axis=axis)


def mean(a: TensorLike, axis: typing.Optional[int] = None) -> Tensor:
    return record("mean", a, axis=axis)


def square(a: TensorLike) -> Tensor:
    return record("square", a)


def abs(a: TensorLike) -> Tensor:
    return record("abs", a)


def sign(a: TensorLike) -> Tensor:
    return record("sign", a)


def exp(a: TensorLike) -> Tensor:
    return record("exp", a)


def tanh(a: TensorLike) -> Tensor:
    return record("tanh", a)


def elu(a: TensorLike) -> Tensor:
    return record("elu", a)


def elu_prime(a: TensorLike) -> Tensor:
    return record("elu_prime", a)


def leaky_relu(a: TensorLike, slope: float = 0.01) -> Tensor:
    return record("leaky_relu", a, slope=slope)


def concat(tensors: typing.Sequence[TensorLike], axis: int = -1) -> Tensor:
    return record("concat", *tensors, axis=axis)


def grid_interp(values: TensorLike, t_pos: TensorLike, x_pos: TensorLike) -> Tensor:
    return record("grid_interp", values, t_pos, x_pos)


def grid_slope(values: TensorLike, t_pos: TensorLike, x_pos: TensorLike) -> Tensor:
    return record("grid_slope", values, t_pos, x_pos)


def spectral_multiply(a: TensorLike, multiplier: np.ndarray) -> Tensor:
    return record("spectral_multiply", a, multiplier=multiplier)


def periodic_conv2d(x: TensorLike, weight: TensorLike, bias: TensorLike) -> Tensor:
    return record("periodic_conv2d", x, weight, bias)
