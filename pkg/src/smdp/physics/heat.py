"""
This submodule contains the stochastic heat equation on a periodic
``d x d`` grid: the spectral solver ``P_h^dt(x) = F^-1(A(dt) o F(x))``,
whose negative-step application is the reverse simulator, and the
Gaussian random fields used as initial conditions.

Fourier indices are pinned at the corner (``numpy.fft`` layout) and the
per-axis mode number is ``kappa(i) = min(i, d - i)``.
"""

import typing

import loguru
import numpy as np

import smdp.autodiff.tensor
import smdp.exceptions
import smdp.sde.simulation


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "PROFILE_MIN_INDEX",
    "PROFILE_QUADRATIC",
    "PROFILES",
    "PROFILE_ALIASES",
    "MAX_MODE_MULTIPLIER",
    "IMAGINARY_RESIDUE_TOLERANCE",

    "HeatField2D",
    "SpectralDecay",
    "HeatEquation2D",

    "mode_numbers",
    "heat_forward",
    "grf_values",
    "sample_grf",
    "grf_initial_sampler",
]


PROFILE_MIN_INDEX = "min-index"
PROFILE_QUADRATIC = "quadratic"

PROFILES: typing.List[str] = [PROFILE_MIN_INDEX, PROFILE_QUADRATIC]

# names accepted in configuration documents for the profiles above
PROFILE_ALIASES: typing.Dict[str, str] = {
    "paper-literal": PROFILE_MIN_INDEX,
}

MAX_MODE_MULTIPLIER = 1e12

IMAGINARY_RESIDUE_TOLERANCE = 1e-10


logger = loguru.logger

Tensor = smdp.autodiff.tensor.Tensor


def mode_numbers(d: int) -> np.ndarray:
    """``kappa(i) = min(i, d - i)`` for ``i = 0..d-1``."""
    return np.abs(np.fft.fftfreq(d) * d).round().astype(np.int64)


class HeatField2D:
    """A real field on a periodic ``d x d`` grid."""

    def __init__(self, values: typing.Union[np.ndarray, Tensor]):
        if isinstance(values, Tensor):
            values = values.data
        values = np.array(values, dtype=np.float64)
        if values.ndim == 1:
            side = int(round(np.sqrt(values.size)))
            if side * side != values.size:
                raise smdp.exceptions.ShapeError("HeatField2D", values.shape, ("d*d",))
            values = values.reshape(side, side)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise smdp.exceptions.ShapeError("HeatField2D", values.shape, ("d", "d"))
        values.setflags(write=False)
        self._values = values

    def __repr__(self):
        return "HeatField2D(d={}, mean={:.3g}, std={:.3g})".format(
            self.resolution, float(self._values.mean()), float(self._values.std()))

    @property
    def resolution(self) -> int:
        return self._values.shape[0]

    @property
    def values(self) -> np.ndarray:
        return self._values

    def flat(self) -> np.ndarray:
        """Row-major flattening, the layout used inside trajectory containers."""
        return self._values.reshape(-1).copy()


class SpectralDecay:
    """
    Table of per-mode exponents ``nu(i, j)`` with multipliers
    ``A(dt) = exp(-dt alpha nu)``.

    Profiles:

    - ``min-index`` (also ``paper-literal``): ``nu(i, j) = min(i, j, d - i, d - j)``;
    - ``quadratic``: ``nu(i, j) = kappa(i)^2 + kappa(j)^2``, the periodic heat
      kernel for unit diffusivity.

    The diffusivity :py:data:`alpha` scales every exponent.
    """

    def __init__(self, d: int, profile: str = PROFILE_MIN_INDEX, alpha: float = 1.0):
        if d < 2:
            raise smdp.exceptions.SmdpConfigError("resolution must be at least 2, got {}".format(d))
        profile = PROFILE_ALIASES.get(profile, profile)
        if profile not in PROFILES:
            raise smdp.exceptions.SmdpConfigError(
                "unknown spectral profile '{}', expected one of {}".format(profile, PROFILES))
        if alpha < 0:
            raise smdp.exceptions.SmdpConfigError("diffusivity must be nonnegative, got {}".format(alpha))

        self.d = int(d)
        self.profile = profile
        self.alpha = float(alpha)

        kappa = mode_numbers(self.d)
        if profile == PROFILE_MIN_INDEX:
            nu = np.minimum.outer(kappa, kappa)
        else:
            nu = np.add.outer(kappa ** 2, kappa ** 2)
        self._nu = (self.alpha * nu).astype(np.float64)
        self._nu.setflags(write=False)

    def __repr__(self):
        return "SpectralDecay(d={}, profile={!r}, alpha={})".format(self.d, self.profile, self.alpha)

    @property
    def exponents(self) -> np.ndarray:
        return self._nu

    def table(self, dt: typing.Union[float, np.ndarray]) -> np.ndarray:
        """
        Returns ``A(dt)``, of shape ``[d, d]`` for a scalar step or
        ``[B, d, d]`` for an array of per-sample steps.

        :raises SmdpConfigError: if a mode multiplier exceeds
            :py:data:`MAX_MODE_MULTIPLIER` (reverse steps that are too long)
        """
        dt = np.asarray(dt, dtype=np.float64)
        log_table = -dt[..., None, None] * self._nu
        worst = np.unravel_index(np.argmax(log_table), log_table.shape)
        if log_table[worst] > np.log(MAX_MODE_MULTIPLIER):
            raise smdp.exceptions.SmdpConfigError(
                "spectral multiplier of mode {} is exp({:.4g}) > {:g} at dt={}".format(
                    tuple(int(i) for i in worst[-2:]), log_table[worst], MAX_MODE_MULTIPLIER,
                    float(dt.reshape(-1)[worst[0]] if dt.ndim else dt)))
        return np.exp(log_table)

    def apply(self, x: Tensor, dt: typing.Union[float, np.ndarray]) -> Tensor:
        """
        Applies ``P_h^dt`` to a batch of flattened fields ``[..., d*d]`` on the
        tape; :py:data:`dt` is a scalar or one step per field.
        """
        shape = x.shape
        fields = x.reshape((-1, self.d, self.d))
        out = smdp.autodiff.tensor.spectral_multiply(fields, self.table(dt))
        return out.reshape(shape)

    def generator(self, x: Tensor) -> Tensor:
        """The drift ``-nu o F(x)``, i.e. the time derivative of ``P_h``."""
        shape = x.shape
        fields = x.reshape((-1, self.d, self.d))
        return smdp.autodiff.tensor.spectral_multiply(fields, -self._nu).reshape(shape)


def heat_forward(field: HeatField2D, dt: float, decay: SpectralDecay) -> HeatField2D:
    """
    One spectral solver step ``F^-1(A(dt) o F(x))``; a negative :py:data:`dt`
    runs the solver backward.

    :raises SmdpConfigError: if a mode multiplier overflows (see
        :py:meth:`SpectralDecay.table`)
    :raises NonFiniteError: if the inverse transform leaves an imaginary
        residue above :py:data:`IMAGINARY_RESIDUE_TOLERANCE`
    """
    if field.resolution != decay.d:
        raise smdp.exceptions.ShapeError("heat_forward", field.values.shape, (decay.d, decay.d))

    spectrum = np.fft.fft2(field.values) * decay.table(dt)
    out = np.fft.ifft2(spectrum)

    residue = float(np.max(np.abs(out.imag)))
    scale = max(1.0, float(np.max(np.abs(out.real))))
    if residue > IMAGINARY_RESIDUE_TOLERANCE * scale:
        raise smdp.exceptions.NonFiniteError(
            "heat solver left an imaginary residue of {:.3g}".format(residue))

    return HeatField2D(out.real)


class HeatEquation2D:
    """
    The stochastic heat equation ``dx = P_h(x) dt + g dW`` on a ``d x d``
    periodic grid. Forward steps use the spectral solver, the reverse
    simulator is the same solver with a negated step.
    """

    def __init__(
            self,
            d: int = 32,
            g: float = 0.1,
            profile: str = PROFILE_MIN_INDEX,
            alpha: float = 1.0,
            grf_exponent: float = 4.0,
    ):
        if g < 0:
            raise smdp.exceptions.SmdpConfigError("g must be nonnegative, got {}".format(g))
        self.decay = SpectralDecay(d=d, profile=profile, alpha=alpha)
        self.g = float(g)
        self.grf_exponent = float(grf_exponent)

    def __repr__(self):
        return "HeatEquation2D(d={}, g={}, profile={!r}, alpha={})".format(
            self.d, self.g, self.decay.profile, self.decay.alpha)

    @property
    def d(self) -> int:
        return self.decay.d

    def forward_solver(self, x: Tensor, dt: float) -> Tensor:
        return self.decay.apply(x, dt)

    def reverse_solver(self, x: Tensor, dt: float) -> Tensor:
        return self.decay.apply(x, -dt)

    def diffusion(self, t: float) -> float:
        return self.g

    def drift(self, x: Tensor) -> Tensor:
        return self.decay.generator(x)

    def reverse_drift(self, x: Tensor) -> Tensor:
        return -self.decay.generator(x)

    def initial_sampler(self) -> smdp.sde.simulation.Sampler:
        return grf_initial_sampler(d=self.d, n=self.grf_exponent)

    def spec(self) -> smdp.sde.simulation.SdeSpec:
        return smdp.sde.simulation.SdeSpec(
            name="heat-equation",
            dim=self.d * self.d,
            drift=self.drift,
            diffusion=self.diffusion,
            reverse_drift=self.reverse_drift,
            forward_solver=self.forward_solver,
            reverse_solver=self.reverse_solver,
            params={
                "d": self.d,
                "g": self.g,
                "profile": self.decay.profile,
                "alpha": self.decay.alpha,
                "grf_exponent": self.grf_exponent,
            },
        )


# =============================================================================
# Gaussian random fields


def _hermitian(z: np.ndarray) -> np.ndarray:
    # z(-k) with indices taken modulo d
    mirrored = np.roll(np.flip(z, axis=(-2, -1)), shift=1, axis=(-2, -1))
    return 0.5 * (z + np.conj(mirrored))


def grf_values(d: int, n: float, rng: np.random.Generator, count: typing.Optional[int] = None) -> np.ndarray:
    """
    Draws Gaussian random fields with isotropic power spectrum
    ``(1 + |k|)^-n``, each normalized to zero mean and unit standard
    deviation. Returns ``[d, d]`` (or ``[count, d, d]``).

    :raises SmdpConfigError: if ``d < 4`` or ``n <= 0``
    """
    if int(d) < 4:
        raise smdp.exceptions.SmdpConfigError("GRF resolution must be at least 4, got {}".format(d))
    if not n > 0:
        raise smdp.exceptions.SmdpConfigError("GRF spectral exponent must be positive, got {}".format(n))

    d = int(d)
    shape = (d, d) if count is None else (int(count), d, d)

    k = np.fft.fftfreq(d) * d
    radius = np.sqrt(np.add.outer(k ** 2, k ** 2))
    amplitude = (1.0 + radius) ** (-0.5 * n)

    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    field = np.fft.ifft2(_hermitian(z) * amplitude).real

    field = field - field.mean(axis=(-2, -1), keepdims=True)
    field = field / field.std(axis=(-2, -1), keepdims=True)
    return field


def sample_grf(d: int = 32, n: float = 4.0, seed: int = 0) -> HeatField2D:
    """A single Gaussian random field, deterministic given :py:data:`seed`."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    return HeatField2D(grf_values(d=d, n=n, rng=rng))


def grf_initial_sampler(d: int, n: float = 4.0) -> smdp.sde.simulation.Sampler:
    """Returns ``sampler(rng, count) -> [count, d*d]`` of flattened GRFs."""

    def _sampler(rng: np.random.Generator, count: int) -> np.ndarray:
        return grf_values(d=d, n=n, rng=rng, count=count).reshape(count, d * d)

    return _sampler
