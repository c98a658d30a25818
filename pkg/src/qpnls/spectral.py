"""Implements spatial coefficient arrays and the periodic grids the integrators work on.

Grid values on T^d = [0, 2 pi)^d use the normalised measure, so that the L2 norm of a grid
function equals the l2 norm of its Fourier coefficients.
"""
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.fft

from qpnls.data_structures import FourierField, SpatialField
from qpnls.helpers import DimensionMismatchError


def zero_spatial(radius: int, d: int) -> SpatialField:
    return SpatialField(coefficients=np.zeros((2 * radius + 1,) * d, dtype=complex), radius=radius)


def spatial_from_entries(
    entries: Mapping[Tuple[int, ...], complex],
    radius: int,
    d: int,
) -> SpatialField:
    """Builds a spatial field from a j -> coefficient map; entries beyond radius are dropped."""
    field = zero_spatial(radius, d)
    for j, value in entries.items():
        if max(abs(c) for c in j) <= radius:
            field.coefficients[tuple(c + radius for c in j)] += value
    return field


def spatial_entries(field: SpatialField, tolerance: float = 0.0) -> dict:
    """The non-negligible coefficients as a j -> coefficient map."""
    result = {}
    for position in zip(*np.nonzero(np.abs(field.coefficients) > tolerance)):
        j = tuple(int(c) - field.radius for c in position)
        result[j] = complex(field.coefficients[position])
    return result


def spatial_dimension(field: SpatialField) -> int:
    return int(field.coefficients.ndim)


def resize(field: SpatialField, radius: int) -> SpatialField:
    """Embeds or crops the coefficients to a new sup-norm radius."""
    d = spatial_dimension(field)
    result = zero_spatial(radius, d)
    common = min(radius, field.radius)
    source = tuple(slice(field.radius - common, field.radius + common + 1) for _ in range(d))
    target = tuple(slice(radius - common, radius + common + 1) for _ in range(d))
    result.coefficients[target] = field.coefficients[source]
    return result


def frequencies(radius: int, d: int) -> np.ndarray:
    """The integer frequencies j of a centred coefficient array, shape (2r+1,)*d + (d,)."""
    axis = np.arange(-radius, radius + 1)
    return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1)


def l2_norm(field: SpatialField) -> float:
    return float(np.sqrt((np.abs(field.coefficients) ** 2).sum()))


def analytic_norm(field: SpatialField, beta: float) -> float:
    """Returns sum_j e^{beta ||j||} |psi_hat(j)|."""
    j = frequencies(field.radius, spatial_dimension(field)).astype(float)
    weight = np.exp(beta * np.sqrt((j ** 2).sum(axis=-1)))
    return float((weight * np.abs(field.coefficients)).sum())


def evaluate_spatial(field: SpatialField, x: Sequence[float]) -> complex:
    """Returns sum_j psi_hat(j) e^{i j.x}."""
    j = frequencies(field.radius, spatial_dimension(field)).astype(float)
    x = np.asarray(x, dtype=float)
    return complex((field.coefficients * np.exp(1j * (j @ x))).sum())


##########################################################################################


def default_grid_size(radius: int, p: int) -> int:
    """The smallest power of two holding the products of 2p + 2 fields of the given radius."""
    needed = max(2 * (2 * p + 1) * radius + 1, 4 * radius, 16)
    return int(2 ** int(np.ceil(np.log2(needed))))


def check_grid(radius: int, grid_size: int) -> None:
    if grid_size < 2 * radius + 1:
        raise DimensionMismatchError(
            f"A grid of {grid_size} points cannot hold frequencies up to {radius}."
        )


def wavenumbers(grid_size: int, d: int) -> np.ndarray:
    """Integer wavenumbers in FFT order, shape (M,)*d + (d,)."""
    axis = np.rint(np.fft.fftfreq(grid_size) * grid_size).astype(np.int64)
    return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1)


def laplacian_symbol(grid_size: int, d: int) -> np.ndarray:
    """|k|^2 on the FFT-ordered grid."""
    return (wavenumbers(grid_size, d) ** 2).sum(axis=-1).astype(float)


def to_spectrum(field: SpatialField, grid_size: int) -> np.ndarray:
    """Places the centred coefficients into an FFT-ordered array of size grid_size^d."""
    d = spatial_dimension(field)
    check_grid(field.radius, grid_size)
    spectrum = np.zeros((grid_size,) * d, dtype=complex)
    j = frequencies(field.radius, d).reshape(-1, d)
    position = tuple((j % grid_size).T)
    spectrum[position] = field.coefficients.reshape(-1)
    return spectrum


def from_spectrum(spectrum: np.ndarray, radius: int) -> SpatialField:
    """Extracts the centred coefficients with ||j||_inf <= radius from an FFT-ordered array."""
    d = spectrum.ndim
    grid_size = spectrum.shape[0]
    check_grid(radius, grid_size)
    j = frequencies(radius, d).reshape(-1, d)
    values = spectrum[tuple((j % grid_size).T)]
    return SpatialField(coefficients=values.reshape((2 * radius + 1,) * d), radius=radius)


def spectrum_to_grid(spectrum: np.ndarray) -> np.ndarray:
    """Grid values sum_k c_k e^{i k.x} from FFT-ordered coefficients (batch axes lead)."""
    d_axes = tuple(range(-spectrum_dimension(spectrum), 0))
    size = np.prod([spectrum.shape[axis] for axis in d_axes])
    return scipy.fft.ifftn(spectrum, axes=d_axes) * size


def grid_to_spectrum(values: np.ndarray, d: Optional[int] = None) -> np.ndarray:
    """FFT-ordered coefficients of grid values (batch axes lead)."""
    d = d or values.ndim
    d_axes = tuple(range(-d, 0))
    size = np.prod([values.shape[axis] for axis in d_axes])
    return scipy.fft.fftn(values, axes=d_axes) / size


def spectrum_dimension(spectrum: np.ndarray) -> int:
    # Batched spectra carry their batch axis first; grids are square.
    shape = spectrum.shape
    d = 1
    while d < len(shape) and shape[-d - 1] == shape[-1]:
        d += 1
    return d


def to_grid(field: SpatialField, grid_size: int) -> np.ndarray:
    return spectrum_to_grid(to_spectrum(field, grid_size))


def from_grid(values: np.ndarray, radius: int) -> SpatialField:
    return from_spectrum(grid_to_spectrum(values, values.ndim), radius)


def spectral_l2_norm(spectrum: np.ndarray, d: int) -> np.ndarray:
    """l2 norms of FFT-ordered spectra over their last d axes."""
    axes = tuple(range(-d, 0))
    return np.sqrt((np.abs(spectrum) ** 2).sum(axis=axes))


def spectral_analytic_norm(spectrum: np.ndarray, d: int, beta: float) -> np.ndarray:
    """Analytic norms sum_k e^{beta |k|} |c_k| of FFT-ordered spectra."""
    grid_size = spectrum.shape[-1]
    k = wavenumbers(grid_size, d).astype(float)
    weight = np.exp(beta * np.sqrt((k ** 2).sum(axis=-1)))
    axes = tuple(range(-d, 0))
    return (weight * np.abs(spectrum)).sum(axis=axes)


##########################################################################################


class QuasiPeriodicSampler:
    """Samples a quasi-periodic field on a spatial grid at arbitrary times.

    The per-entry phase data and the FFT positions are computed once, so repeated samples only
    cost one phase evaluation, one scatter and one inverse FFT.
    """

    def __init__(
        self,
        field: FourierField,
        omega: np.ndarray,
        theta: np.ndarray,
        grid_size: int,
        secular: Optional[FourierField] = None,
    ) -> None:
        self.d = int(field.coords.shape[1] - field.time_dim)
        self.grid_size = grid_size
        self._parts = [self._prepare(field, omega, theta)]
        self._secular = self._prepare(secular, omega, theta) if secular is not None else None

    def _prepare(self, field: FourierField, omega: np.ndarray, theta: np.ndarray) -> tuple:
        n = field.coords[:, :field.time_dim].astype(float)
        j = field.coords[:, field.time_dim:]
        radius = int(np.abs(j).max()) if j.size else 0
        check_grid(radius, self.grid_size)
        flat = np.ravel_multi_index(tuple((j % self.grid_size).T), (self.grid_size,) * self.d)
        return (
            flat,
            field.values,
            n @ np.asarray(theta, dtype=float),
            n @ np.asarray(omega, dtype=float),
        )

    def _scatter(self, flat: np.ndarray, weights: np.ndarray) -> np.ndarray:
        size = self.grid_size ** self.d
        spectrum = (
            np.bincount(flat, weights=weights.real, minlength=size)
            + 1j * np.bincount(flat, weights=weights.imag, minlength=size)
        )
        return spectrum.reshape((self.grid_size,) * self.d)

    def spectrum(self, t: float) -> np.ndarray:
        """FFT-ordered spatial coefficients at time t (secular part included)."""
        flat, values, n_theta, n_omega = self._parts[0]
        weights = values * np.exp(1j * (n_theta + t * n_omega))
        spectrum = self._scatter(flat, weights)
        if self._secular is not None:
            flat, values, n_theta, n_omega = self._secular
            rotation = values * np.exp(1j * (n_theta + t * n_omega))
            spectrum = spectrum + t * self._scatter(flat, rotation)
        return spectrum

    def time_derivative_spectrum(self, t: float) -> np.ndarray:
        """FFT-ordered coefficients of the time derivative at time t."""
        flat, values, n_theta, n_omega = self._parts[0]
        weights = 1j * n_omega * values * np.exp(1j * (n_theta + t * n_omega))
        spectrum = self._scatter(flat, weights)
        if self._secular is not None:
            flat, values, n_theta, n_omega = self._secular
            rotation = values * np.exp(1j * (n_theta + t * n_omega))
            spectrum = spectrum + self._scatter(flat, rotation * (1.0 + 1j * t * n_omega))
        return spectrum

    def values(self, t: float) -> np.ndarray:
        """Grid values at time t."""
        return spectrum_to_grid(self.spectrum(t))
