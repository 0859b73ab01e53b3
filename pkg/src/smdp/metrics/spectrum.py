"""
This submodule computes radially averaged power spectra of square fields
and the weighted log-spectral distance between two spectra.

The transform is orthonormal, so bin 0 of a field holds ``d^2`` times its
squared mean and the total power equals the field energy. Pixels of the
shifted spectrum are binned by their distance to the center rounded half
away from zero; the corners beyond radius ``d/2`` get their own bins so
no power is dropped.
"""

import typing

import numpy as np

import smdp.exceptions
import smdp.physics.heat


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "LOG_FLOOR",
    "DEFAULT_MAX_WEIGHTED_BIN",

    "SpectrumProfile",

    "radial_bins",
    "radial_spectrum",
    "mean_radial_spectrum",
    "default_weights",
    "spectral_loss",
    "spectrum_slope",
]


LOG_FLOOR = 1e-20

DEFAULT_MAX_WEIGHTED_BIN = 10


FieldLike = typing.Union[smdp.physics.heat.HeatField2D, np.ndarray]


class SpectrumProfile(typing.NamedTuple):
    """Mean power per radial bin, with the number of pixels of each bin."""

    power: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return self.power.shape[0]

    @property
    def total(self) -> float:
        return float(np.sum(self.power * self.counts))


def _as_fields(field: FieldLike) -> np.ndarray:
    if isinstance(field, smdp.physics.heat.HeatField2D):
        return field.values[None]
    values = np.asarray(field, dtype=np.float64)
    if values.ndim == 1:
        return smdp.physics.heat.HeatField2D(values).values[None]
    if values.ndim == 2 and values.shape[0] == values.shape[1]:
        return values[None]
    if values.ndim == 3 and values.shape[1] == values.shape[2]:
        return values
    if values.ndim == 2:
        return np.stack([smdp.physics.heat.HeatField2D(row).values for row in values])
    raise smdp.exceptions.ShapeError("radial_spectrum", values.shape, ("d", "d"))


def radial_bins(d: int) -> np.ndarray:
    """Bin index of every pixel of a ``fftshift``-ed ``d x d`` spectrum."""
    center = d // 2
    offsets = np.arange(d) - center
    distance = np.sqrt(np.add.outer(offsets ** 2, offsets ** 2))
    # half away from zero (distances are nonnegative)
    return np.floor(distance + 0.5).astype(np.int64)


def _profile(power: np.ndarray) -> SpectrumProfile:
    d = power.shape[-1]
    bins = radial_bins(d).reshape(-1)
    counts = np.bincount(bins)
    sums = np.bincount(bins, weights=power.reshape(-1), minlength=counts.size)
    with np.errstate(invalid="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    return SpectrumProfile(power=mean, counts=counts)


def _power(fields: np.ndarray) -> np.ndarray:
    spectrum = np.fft.fftshift(np.fft.fft2(fields, norm="ortho"), axes=(-2, -1))
    return np.abs(spectrum) ** 2


def radial_spectrum(field: FieldLike) -> SpectrumProfile:
    """
    Radially averaged power spectrum of one square field (a
    :py:class:`~smdp.physics.heat.HeatField2D`, a ``[d, d]`` array or a
    flattened ``[d*d]`` array).
    """
    fields = _as_fields(field)
    if fields.shape[0] != 1:
        raise smdp.exceptions.ShapeError("radial_spectrum", fields.shape, ("d", "d"))
    return _profile(_power(fields)[0])


def mean_radial_spectrum(fields: FieldLike) -> SpectrumProfile:
    """Radial spectrum of the pixelwise mean power over a batch of fields."""
    return _profile(np.mean(_power(_as_fields(fields)), axis=0))


def default_weights(size: int, max_bin: int = DEFAULT_MAX_WEIGHTED_BIN) -> np.ndarray:
    """``w_k = 1`` for ``k <= max_bin``, else 0."""
    return (np.arange(size) <= max_bin).astype(np.float64)


def spectral_loss(
        s1: SpectrumProfile,
        s2: SpectrumProfile,
        weights: typing.Optional[np.ndarray] = None,
) -> float:
    """
    ``sum_k w_k |log s1_k - log s2_k|``, with bins floored at
    :py:data:`LOG_FLOOR` before taking logarithms.

    :raises ShapeError: if the profiles (or the weights) have different lengths
    """
    p1 = np.asarray(s1.power if isinstance(s1, SpectrumProfile) else s1, dtype=np.float64)
    p2 = np.asarray(s2.power if isinstance(s2, SpectrumProfile) else s2, dtype=np.float64)
    if p1.shape != p2.shape:
        raise smdp.exceptions.ShapeError("spectral_loss", p1.shape, p2.shape)

    weights = default_weights(p1.size) if weights is None else np.asarray(weights, dtype=np.float64)
    if weights.shape != p1.shape:
        raise smdp.exceptions.ShapeError("spectral_loss", weights.shape, p1.shape)

    diff = np.abs(np.log(np.maximum(p1, LOG_FLOOR)) - np.log(np.maximum(p2, LOG_FLOOR)))
    return float(np.sum(weights * diff))


def spectrum_slope(profile: SpectrumProfile, k_min: int = 2, k_max: int = 10) -> float:
    """
    Least-squares slope of ``log power`` against ``log(1 + k)`` over the
    bins ``k_min..k_max``; a field with spectrum ``(1 + |k|)^-n`` gives
    about ``-n``.
    """
    k = np.arange(int(k_min), int(k_max) + 1)
    if k.size < 2 or k[-1] >= len(profile):
        raise smdp.exceptions.SmdpConfigError(
            "cannot fit a slope over bins {}..{} of a {}-bin spectrum".format(k_min, k_max, len(profile)))
    power = np.maximum(profile.power[k], LOG_FLOOR)
    slope, _ = np.polyfit(np.log1p(k), np.log(power), 1)
    return float(slope)
