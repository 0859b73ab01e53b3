"""
This submodule contains the retry policy used while generating datasets:
a trajectory slot whose forward simulation diverges is redrawn with a
fresh Brownian path, up to :py:data:`MAX_TRIES_PER_SLOT` times.
"""

import typing

import backoff
import loguru

import smdp.exceptions


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "MAX_TRIES_PER_SLOT",
    "SlotAttempt",
    "divergence_retry",
]


MAX_TRIES_PER_SLOT = 100
"""
Maximum number of fresh draws for a single trajectory slot before
dataset generation gives up and propagates the divergence.
"""


logger = loguru.logger


class SlotAttempt:
    """
    Mutable cursor over the draws of one trajectory slot; the retry
    handler advances :py:attr:`attempt` so that each call draws from a new
    random stream.
    """

    def __init__(self, slot: int, attempt: int = 0):
        self.slot = slot
        self.attempt = attempt

    def __repr__(self):
        return "SlotAttempt(slot={}, attempt={})".format(self.slot, self.attempt)


def _next_attempt(details: typing.Dict[str, typing.Any]) -> None:
    cursor = next(
        (arg for arg in details.get("args", ()) if isinstance(arg, SlotAttempt)),
        details.get("kwargs", {}).get("cursor"),
    )
    if cursor is None:
        return
    cursor.attempt += 1
    logger.warning(
        "Trajectory slot {} diverged (try {}); redrawing with a fresh stream.",
        cursor.slot, details.get("tries"),
    )


def _give_up(details: typing.Dict[str, typing.Any]) -> None:
    logger.error("Giving up on trajectory slot after {} tries.", details.get("tries"))


divergence_retry = backoff.on_exception(
    wait_gen=backoff.constant,
    exception=smdp.exceptions.DivergenceError,
    max_tries=MAX_TRIES_PER_SLOT,
    interval=0,
    jitter=None,
    on_backoff=_next_attempt,
    on_giveup=_give_up,
)
"""
.. py:decorator:: @divergence_retry

    Retries a slot-simulation function (whose arguments include a
    :py:class:`SlotAttempt`) whenever it raises
    :py:exc:`smdp.exceptions.DivergenceError`, incrementing the attempt
    counter between tries. After :py:data:`MAX_TRIES_PER_SLOT` failures the
    last exception is re-raised.

.. seealso::
    This functionality is powered by the :py:mod:`backoff` package.
"""
