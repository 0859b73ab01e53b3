"""
This submodule contains the exception hierarchy of SMDP. Every exception
carries a human-readable :py:attr:`SmdpError.message` and the process
:py:attr:`SmdpError.exit_code` that the command-line interface uses when
the exception escapes a command.
"""

import typing


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "EXIT_SUCCESS",
    "EXIT_CONFIG_ERROR",
    "EXIT_DIVERGENCE",
    "EXIT_ACCEPTANCE",

    "SmdpError",
    "ShapeError",
    "TapeError",
    "NonFiniteError",
    "DivergenceError",
    "TrainingAbortedError",
    "SmdpConfigError",
    "ArtifactConflictError",
    "MissingArtifactError",
    "AcceptanceError",
]


EXIT_SUCCESS = 0
EXIT_CONFIG_ERROR = 2
EXIT_DIVERGENCE = 3
EXIT_ACCEPTANCE = 4


class SmdpError(Exception):

    exit_code: int = 1

    def __init__(self, message: str = "", *args):
        super().__init__(message, *args)
        self._message = message

    def __str__(self):
        return self.message

    @property
    def message(self) -> str:
        return self._message if self._message is not None else ""


class ShapeError(SmdpError, ValueError):
    """
    Raised when a primitive receives operands with incompatible shapes;
    the message always reports both shapes.
    """

    def __init__(self, op: str, *shapes: typing.Tuple[int, ...]):
        super().__init__("{op}: incompatible shapes {shapes}".format(
            op=op,
            shapes=" vs. ".join(map(str, shapes)),
        ))
        self.op = op
        self.shapes = shapes


class TapeError(SmdpError):
    """Raised on misuse of a recording tape (e.g., non-scalar backward)."""


class NonFiniteError(SmdpError, ArithmeticError):

    def __init__(self, message: str, index: typing.Optional[typing.Any] = None):
        super().__init__(message)
        self.index = index


class DivergenceError(NonFiniteError):
    """
    Raised when a simulation or rollout leaves the finite domain (any
    non-finite entry, or any magnitude above the divergence threshold).
    The step index at which the divergence was detected is kept in
    :py:attr:`step`.
    """

    exit_code = EXIT_DIVERGENCE

    def __init__(self, message: str, step: typing.Optional[int] = None, value: typing.Optional[float] = None):
        super().__init__(message, index=step)
        self.step = step
        self.value = value


class TrainingAbortedError(SmdpError):

    exit_code = EXIT_DIVERGENCE

    def __init__(
            self,
            message: str,
            phase: typing.Optional[int] = None,
            epoch: typing.Optional[int] = None,
            loss: typing.Optional[float] = None,
    ):
        super().__init__(message)
        self.phase = phase
        self.epoch = epoch
        self.loss = loss


class SmdpConfigError(SmdpError, ValueError):

    exit_code = EXIT_CONFIG_ERROR


class ArtifactConflictError(SmdpConfigError):
    """
    Raised when a stage would overwrite an artifact produced from a
    different configuration hash (and ``--force`` was not given).
    """


class MissingArtifactError(SmdpConfigError):
    """Raised when a stage needs an artifact that does not exist yet."""


class AcceptanceError(SmdpError):

    exit_code = EXIT_ACCEPTANCE

    def __init__(self, message: str, failures: typing.Optional[typing.List[str]] = None):
        super().__init__(message)
        self.failures = list(failures or [])
