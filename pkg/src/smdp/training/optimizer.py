"""
This submodule contains the Adam optimizer with bias correction, working
on flat parameter vectors, and global-norm gradient clipping.
"""

import typing

import numpy as np

import smdp.exceptions


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "BETA1",
    "BETA2",
    "EPSILON",
    "DEFAULT_CLIP_NORM",

    "AdamState",
    "adam_step",
    "clip_by_global_norm",
]


BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8

DEFAULT_CLIP_NORM = 10.0


class AdamState(typing.NamedTuple):
    """First and second moment accumulators and the step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPSILON

    @classmethod
    def zeros(cls, size: int, **kwargs) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), step=0, **kwargs)


def adam_step(
        state: AdamState,
        params: np.ndarray,
        grads: np.ndarray,
        lr: float,
) -> typing.Tuple[np.ndarray, AdamState]:
    """
    Returns the updated parameters and the new state after one
    bias-corrected Adam update.

    :raises ShapeError: if parameters, gradients and moments differ in shape
    :raises NonFiniteError: if any gradient entry is not finite
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise smdp.exceptions.ShapeError("adam_step", params.shape, grads.shape, state.m.shape)

    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size > 0:
        raise smdp.exceptions.NonFiniteError(
            "non-finite gradient at parameter index {}".format(int(bad[0])), index=int(bad[0]))

    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads

    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)

    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, state._replace(m=m, v=v, step=step)


def clip_by_global_norm(grads: np.ndarray, max_norm: typing.Optional[float] = DEFAULT_CLIP_NORM) -> np.ndarray:
    """Rescales :py:data:`grads` so that its Euclidean norm is at most :py:data:`max_norm`."""
    if max_norm is None:
        return grads
    norm = float(np.linalg.norm(grads))
    if norm > max_norm:
        return grads * (max_norm / norm)
    return grads
