"""
This submodule computes the posterior metric ``Q`` of the two-point toy
problem: endpoints close to ``-1`` or ``+1`` are labeled, and
``Q = 2 min(rho_-1, rho_+1)`` is 1 for a balanced posterior and 0 for a
collapsed one.
"""

import typing

import numpy as np

import smdp.exceptions
import smdp.physics.toy


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "DEFAULT_TOLERANCE",
    "QReport",
    "label_endpoints",
    "posterior_metric_q",
]


DEFAULT_TOLERANCE = 0.1


class QReport(typing.NamedTuple):
    rho_minus: float
    rho_plus: float
    q: float
    n: int
    n_divergent: int

    @property
    def unlabeled(self) -> float:
        return 1.0 - self.rho_minus - self.rho_plus


def label_endpoints(
        endpoints: typing.Sequence[float],
        tolerance: float = DEFAULT_TOLERANCE,
) -> np.ndarray:
    """
    Returns ``-1``, ``+1`` or ``0`` (unlabeled) per endpoint; non-finite
    endpoints are unlabeled.
    """
    values = np.asarray(endpoints, dtype=np.float64).reshape(-1)
    minus, plus = smdp.physics.toy.TOY_STARTING_POINTS
    labels = np.zeros(values.shape, dtype=np.int64)
    with np.errstate(invalid="ignore"):
        labels[np.abs(values - minus) < tolerance] = -1
        labels[np.abs(values - plus) < tolerance] = 1
    return labels


def posterior_metric_q(
        endpoints: typing.Sequence[float],
        tolerance: float = DEFAULT_TOLERANCE,
        diverged: typing.Optional[typing.Sequence[bool]] = None,
) -> QReport:
    """
    Labels the endpoints and returns the fractions of each label with
    ``Q``. Divergent endpoints (NaN or flagged in :py:data:`diverged`)
    count in the denominator without a label.

    :raises SmdpConfigError: if there are no endpoints
    """
    values = np.asarray(endpoints, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise smdp.exceptions.SmdpConfigError("posterior metric needs at least one endpoint")
    if not tolerance > 0:
        raise smdp.exceptions.SmdpConfigError("tolerance must be positive, got {}".format(tolerance))

    flagged = ~np.isfinite(values)
    if diverged is not None:
        flagged |= np.asarray(diverged, dtype=bool).reshape(-1)

    labels = label_endpoints(values, tolerance=tolerance)
    labels[flagged] = 0

    rho_minus = float(np.sum(labels == -1)) / values.size
    rho_plus = float(np.sum(labels == 1)) / values.size

    return QReport(
        rho_minus=rho_minus,
        rho_plus=rho_plus,
        q=2.0 * min(rho_minus, rho_plus),
        n=int(values.size),
        n_divergent=int(np.sum(flagged)),
    )
