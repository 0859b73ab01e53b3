"""
Central finite differences, used as the oracle against which every
reverse-mode gradient of the package is checked.
"""

import typing

import numpy as np

import smdp.autodiff.tensor
import smdp.exceptions


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "DEFAULT_STEP",
    "finite_difference_gradient",
    "relative_error",
]


DEFAULT_STEP = 1e-5


def _evaluate(f: typing.Callable, x: np.ndarray, index: typing.Tuple[int, ...]) -> float:
    value = f(smdp.autodiff.tensor.Tensor(x))
    if isinstance(value, smdp.autodiff.tensor.Tensor):
        value = value.item()
    value = float(value)
    if not np.isfinite(value):
        raise smdp.exceptions.NonFiniteError(
            "non-finite function value while perturbing coordinate {}".format(index),
            index=index,
        )
    return value


def finite_difference_gradient(
        f: typing.Callable[[smdp.autodiff.tensor.Tensor], typing.Union[float, smdp.autodiff.tensor.Tensor]],
        x: smdp.autodiff.tensor.TensorLike,
        h: float = DEFAULT_STEP,
) -> smdp.autodiff.tensor.Tensor:
    """
    Returns the central-difference estimate
    ``(f(x + h e_i) - f(x - h e_i)) / (2h)`` for every coordinate ``i``.

    :param f: A scalar function of one tensor
    :param x: The point at which to differentiate
    :param h: The step size

    :raises NonFiniteError: if any evaluation of :py:data:`f` is not finite
    """
    base = smdp.autodiff.tensor.as_tensor(x).numpy()
    result = np.zeros_like(base)

    for index in np.ndindex(*base.shape):
        shifted = base.copy()
        shifted[index] = base[index] + h
        f_plus = _evaluate(f, shifted, index)
        shifted[index] = base[index] - h
        f_minus = _evaluate(f, shifted, index)
        result[index] = (f_plus - f_minus) / (2.0 * h)

    return smdp.autodiff.tensor.Tensor(result)


def relative_error(
        a: smdp.autodiff.tensor.TensorLike,
        b: smdp.autodiff.tensor.TensorLike,
        floor: float = 1e-8,
) -> float:
    """
    Max-norm relative error ``|a - b|_inf / max(|a|_inf, |b|_inf, floor)``.
    """
    a = smdp.autodiff.tensor.as_tensor(a).data
    b = smdp.autodiff.tensor.as_tensor(b).data
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), floor)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)
