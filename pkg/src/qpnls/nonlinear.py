"""Implements lattice convolutions and the nonlinear map F of the lattice equations.

For v = conj(u) reflected, the coefficient equations read

    F_u = diag(n.omega + j^2) u + delta (u * v)^{*p} * u
    F_v = diag(-n.omega + j^2) v + delta (u * v)^{*p} * v

Intermediate convolution products are kept whole; only the final products are restricted to
the truncation, so that F is a polynomial map on the truncated coefficients.
"""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.signal

from qpnls import field, lattice
from qpnls.data_structures import FourierField, FrequencyVector, ProblemSpec, TruncationSpec
from qpnls.helpers import DimensionMismatchError, SiteCapacityError


logger = logging.getLogger(__name__)


DIRECT_SUPPORT_LIMIT = 10_000
DENSE_BOX_LIMIT = 1 << 24
_PAIR_CHUNK = 1 << 21
METHODS = ("auto", "direct", "fft")


def unit_field(time_dim: int, d: int, trunc: Optional[TruncationSpec] = None) -> FourierField:
    """The identity of the convolution, 1 at the origin."""
    return FourierField(
        coords=np.zeros((1, time_dim + d), dtype=np.int64),
        values=np.ones(1, dtype=complex),
        time_dim=time_dim,
        trunc=trunc,
    )


def _check_compatible(f: FourierField, g: FourierField) -> None:
    if f.time_dim != g.time_dim or f.coords.shape[1] != g.coords.shape[1]:
        raise DimensionMismatchError("Fields live on lattices of different dimension.")


def _convolve_direct(f: FourierField, g: FourierField) -> FourierField:
    width = f.coords.shape[1]
    rows_per_chunk = max(1, _PAIR_CHUNK // g.values.size)
    coords_parts, values_parts = [], []
    for start in range(0, f.values.size, rows_per_chunk):
        stop = start + rows_per_chunk
        coords = (f.coords[start:stop, None, :] + g.coords[None, :, :]).reshape(-1, width)
        values = (f.values[start:stop, None] * g.values[None, :]).reshape(-1)
        part = field.make_field(coords, values, f.time_dim, None)
        coords_parts.append(part.coords)
        values_parts.append(part.values)
    return field.make_field(
        np.concatenate(coords_parts), np.concatenate(values_parts), f.time_dim, None
    )


def _dense_box(f: FourierField) -> Tuple[np.ndarray, np.ndarray]:
    low = f.coords.min(axis=0)
    shape = tuple(int(extent) for extent in f.coords.max(axis=0) - low + 1)
    dense = np.zeros(shape, dtype=complex)
    dense[tuple((f.coords - low).T)] = f.values
    return dense, low


def _box_volume(f: FourierField, g: FourierField) -> float:
    extent = (
        f.coords.max(axis=0) - f.coords.min(axis=0)
        + g.coords.max(axis=0) - g.coords.min(axis=0)
        + 1
    )
    return float(np.prod(extent.astype(float)))


def _convolve_fft(f: FourierField, g: FourierField) -> FourierField:
    if _box_volume(f, g) > DENSE_BOX_LIMIT:
        raise SiteCapacityError(
            f"The dense convolution box holds {_box_volume(f, g):.3g} sites, "
            f"above {DENSE_BOX_LIMIT}."
        )
    dense_f, low_f = _dense_box(f)
    dense_g, low_g = _dense_box(g)
    product = scipy.signal.fftconvolve(dense_f, dense_g)
    # The support is the set of reachable sums, not the set of numerically nonzero entries.
    reach = scipy.signal.fftconvolve(
        (dense_f != 0).astype(float), (dense_g != 0).astype(float)
    ) > 0.5
    positions = np.argwhere(reach)
    return field.make_field(
        positions + low_f + low_g, product[tuple(positions.T)], f.time_dim, None
    )


def convolve(
    f: FourierField,
    g: FourierField,
    trunc: Optional[TruncationSpec] = None,
    method: str = "auto",
    generic: Sequence[int] = (),
) -> FourierField:
    """Returns (f * g)(s) = sum_{s1 + s2 = s} f(s1) g(s2).

    Parameters
    ----------
    f: FourierField
        The first factor.
    g: FourierField
        The second factor.
    trunc: Optional[TruncationSpec]
        When given, the product is restricted to this truncation and the l1 mass of the
        discarded entries is added to dropped_mass. When omitted the product is kept whole.
    method: str
        "direct" for chunked pairwise summation, "fft" for dense FFT convolution over the
        bounding box and "auto" to use direct summation for supports up to 10^4 sites and the
        FFT when the box fits in memory otherwise.
    generic: Sequence[int]
        The generic directions, needed when trunc caps the non-generic excitations.

    Returns
    -------
    FourierField
        The product with unique sites in ascending key order.
    """
    _check_compatible(f, g)
    if method not in METHODS:
        raise ValueError(f"Unknown convolution method {method!r}.")
    dropped = f.dropped_mass + g.dropped_mass
    if f.values.size == 0 or g.values.size == 0:
        product = field.zero_field(f.time_dim, field.spatial_dim(f), None)
    elif method == "direct":
        product = _convolve_direct(f, g)
    elif method == "fft":
        product = _convolve_fft(f, g)
    elif max(f.values.size, g.values.size) <= DIRECT_SUPPORT_LIMIT:
        product = _convolve_direct(f, g)
    elif _box_volume(f, g) <= DENSE_BOX_LIMIT:
        product = _convolve_fft(f, g)
    else:
        product = _convolve_direct(f, g)
    product = product._replace(dropped_mass=dropped)
    if trunc is not None:
        product = field.truncate(product, trunc, generic)
    return product


def power(w: FourierField, exponent: int, method: str = "auto") -> FourierField:
    """Returns w^{*exponent}, the unit field for exponent 0."""
    result = unit_field(w.time_dim, field.spatial_dim(w))
    for _ in range(exponent):
        result = convolve(result, w, method=method)
    return result


def nonlinear_term(
    u: FourierField,
    v: FourierField,
    p: int,
    trunc: Optional[TruncationSpec] = None,
    method: str = "auto",
    generic: Sequence[int] = (),
) -> FourierField:
    """Returns (u * v)^{*p} * u, restricted to trunc when one is given."""
    return convolve(power(convolve(u, v, method=method), p, method), u, trunc, method, generic)


def dispersion(f: FourierField, omega: FrequencyVector, sign: int = 1) -> FourierField:
    """Multiplies every entry by sign n.omega + |j|^2."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (f.time_dim,):
        raise DimensionMismatchError(
            f"omega has {omega.size} entries for {f.time_dim} time directions."
        )
    n = f.coords[:, :f.time_dim].astype(float)
    j = f.coords[:, f.time_dim:].astype(float)
    return f._replace(values=(sign * (n @ omega) + (j ** 2).sum(axis=1)) * f.values)


def evaluate_F(
    u: FourierField,
    v: FourierField,
    omega: FrequencyVector,
    spec: ProblemSpec,
    trunc: Optional[TruncationSpec] = None,
    method: str = "auto",
    generic: Sequence[int] = (),
) -> Tuple[FourierField, FourierField]:
    """Evaluates both components of the nonlinear map.

    Parameters
    ----------
    u: FourierField
        The coefficients u_hat.
    v: FourierField
        The coefficients v_hat, normally conjugate_field(u).
    omega: FrequencyVector
        The B frequencies.
    spec: ProblemSpec
        The problem parameters; delta and p are read.
    trunc: Optional[TruncationSpec]
        The truncation of the result; defaults to the truncation of u.

    Returns
    -------
    Tuple[FourierField, FourierField]
        The fields F_u and F_v.

    Raises
    ------
    DimensionMismatchError
        If u and v or omega disagree on the lattice dimensions.
    """
    _check_compatible(u, v)
    trunc = trunc if trunc is not None else u.trunc
    linear_u = dispersion(u, omega, 1)
    linear_v = dispersion(v, omega, -1)
    if spec.delta == 0:
        return linear_u._replace(trunc=trunc), linear_v._replace(trunc=trunc)
    kernel = power(convolve(u, v, method=method), spec.p, method)
    F_u = field.add(linear_u, convolve(kernel, u, trunc, method, generic), spec.delta)
    F_v = field.add(linear_v, convolve(kernel, v, trunc, method, generic), spec.delta)
    if trunc is not None:
        F_u = field.truncate(F_u, trunc, generic)
        F_v = field.truncate(F_v, trunc, generic)
    return F_u, F_v


def difference_truncation(trunc: TruncationSpec) -> TruncationSpec:
    """The truncation holding every difference s - s' of two sites of trunc."""
    return TruncationSpec(
        N=2 * trunc.N,
        J_x=2 * trunc.J_x,
        K=trunc.K,
        aux_order=None if trunc.aux_order is None else 2 * trunc.aux_order,
    )


def kernels(
    u: FourierField,
    v: FourierField,
    p: int,
    trunc: Optional[TruncationSpec] = None,
    method: str = "auto",
    generic: Sequence[int] = (),
) -> Tuple[FourierField, FourierField, FourierField]:
    """The convolution kernels of the linearized operator.

    Returns (u * v)^{*p}, (u * v)^{*(p-1)} * u * u and (u * v)^{*(p-1)} * v * v, cropped to the
    differences of two sites of trunc when a truncation is given.
    """
    uv = convolve(u, v, method=method)
    lower = power(uv, p - 1, method)
    crop = difference_truncation(trunc) if trunc is not None else None
    diagonal = convolve(lower, uv, crop, method, generic)
    cross_u = convolve(convolve(lower, u, method=method), u, crop, method, generic)
    cross_v = convolve(convolve(lower, v, method=method), v, crop, method, generic)
    return diagonal, cross_u, cross_v


def site_value(f: FourierField, coords: np.ndarray) -> np.ndarray:
    """Values of f at the given rows, zero where f has no entry."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, f.coords.shape[1])
    if f.values.size == 0:
        return np.zeros(coords.shape[0], dtype=complex)
    positions = lattice.find_rows(f.coords, coords)
    return np.where(positions >= 0, f.values[np.maximum(positions, 0)], 0).astype(complex)
