"""Implements sparse coefficient fields on the lattice, their norms and their evaluation.

A field stands for the quasi-periodic function

    u(t, x) = sum_{(n, j)} u_hat(n, j) e^{i n.(theta + omega t)} e^{i j.x}.
"""
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from qpnls import lattice
from qpnls.data_structures import (
    FourierField,
    LatticeSite,
    ModeData,
    ModeSet,
    ProblemSpec,
    SpatialField,
    TruncationSpec,
)
from qpnls.helpers import DimensionMismatchError, TruncationAsymmetryError


def make_field(
    coords: np.ndarray,
    values: np.ndarray,
    time_dim: int,
    trunc: Optional[TruncationSpec],
    dropped_mass: float = 0.0,
) -> FourierField:
    """Builds a field from possibly repeated sites, summing repeats and dropping zeros."""
    coords = np.asarray(coords, dtype=np.int64)
    values = np.asarray(values, dtype=complex).reshape(-1)
    if coords.ndim != 2 or coords.shape[0] != values.size:
        raise DimensionMismatchError("Coordinates and values do not match.")
    if coords.shape[0]:
        (keys,) = lattice.encode(coords)
        unique_keys, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        inverse = inverse.reshape(-1)
        summed = (
            np.bincount(inverse, weights=values.real, minlength=unique_keys.size)
            + 1j * np.bincount(inverse, weights=values.imag, minlength=unique_keys.size)
        )
        coords = coords[first]
        values = summed
        keep = values != 0
        coords, values = coords[keep], values[keep]
    return FourierField(
        coords=coords.reshape(-1, coords.shape[1] if coords.ndim == 2 else time_dim),
        values=values,
        time_dim=time_dim,
        trunc=trunc,
        dropped_mass=float(dropped_mass),
    )


def zero_field(time_dim: int, d: int, trunc: Optional[TruncationSpec]) -> FourierField:
    return FourierField(
        coords=np.zeros((0, time_dim + d), dtype=np.int64),
        values=np.zeros(0, dtype=complex),
        time_dim=time_dim,
        trunc=trunc,
    )


def from_entries(
    entries: Mapping[LatticeSite, complex],
    time_dim: int,
    d: int,
    trunc: Optional[TruncationSpec],
) -> FourierField:
    """Builds a field from a site -> amplitude map."""
    if not entries:
        return zero_field(time_dim, d, trunc)
    coords = np.asarray([tuple(site.n) + tuple(site.j) for site in entries], dtype=np.int64)
    return make_field(coords, np.asarray(list(entries.values()), dtype=complex), time_dim, trunc)


def entries(field: FourierField) -> Dict[LatticeSite, complex]:
    """The field as a site -> amplitude map."""
    B = field.time_dim
    result = {}
    for row, value in zip(field.coords, field.values):
        site = LatticeSite(n=tuple(int(c) for c in row[:B]), j=tuple(int(c) for c in row[B:]))
        result[site] = complex(value)
    return result


def spatial_dim(field: FourierField) -> int:
    return int(field.coords.shape[1] - field.time_dim)


def ansatz(modes: ModeSet, mode_data: ModeData, trunc: Optional[TruncationSpec]) -> FourierField:
    """The starting field u_hat(-e_k, j_k) = a_k, zero elsewhere."""
    u_coords, _ = lattice.resonant_coords(modes)
    return make_field(u_coords, np.asarray(mode_data.a, dtype=complex), modes.B, trunc)


def add(f: FourierField, g: FourierField, scale: complex = 1.0) -> FourierField:
    """Returns f + scale * g."""
    if f.coords.shape[1] != g.coords.shape[1]:
        raise DimensionMismatchError("Fields live on lattices of different dimension.")
    return make_field(
        np.concatenate([f.coords, g.coords]),
        np.concatenate([f.values, scale * g.values]),
        f.time_dim,
        f.trunc if f.trunc is not None else g.trunc,
        f.dropped_mass + abs(scale) * g.dropped_mass,
    )


def scale(f: FourierField, factor: complex) -> FourierField:
    return f._replace(values=f.values * factor) if factor != 0 else f._replace(
        coords=f.coords[:0], values=f.values[:0]
    )


def restrict(f: FourierField, mask: np.ndarray) -> FourierField:
    """Keeps the entries flagged by mask."""
    mask = np.asarray(mask, dtype=bool)
    return f._replace(coords=f.coords[mask], values=f.values[mask])


def prune(f: FourierField, relative_tolerance: float) -> FourierField:
    """Drops entries below relative_tolerance times the largest modulus."""
    if f.values.size == 0 or relative_tolerance <= 0:
        return f
    magnitude = np.abs(f.values)
    return restrict(f, magnitude > relative_tolerance * magnitude.max())


def truncate(f: FourierField, trunc: TruncationSpec, generic: Sequence[int] = ()) -> FourierField:
    """Restricts f to the truncation, adding the discarded l1 mass to dropped_mass."""
    inside = lattice.truncation_mask(f.coords, trunc, f.time_dim, generic)
    dropped = float(np.abs(f.values[~inside]).sum())
    return FourierField(
        coords=f.coords[inside],
        values=f.values[inside],
        time_dim=f.time_dim,
        trunc=trunc,
        dropped_mass=f.dropped_mass + dropped,
    )


def to_vector(f: FourierField, index: lattice.SiteIndex) -> np.ndarray:
    """Dense vector of f over the ordinals of index; entries of f off the index are ignored."""
    vector = np.zeros(len(index), dtype=complex)
    if f.values.size:
        ordinals = index.ordinals(f.coords)
        found = ordinals >= 0
        vector[ordinals[found]] = f.values[found]
    return vector


def from_vector(
    vector: np.ndarray,
    index: lattice.SiteIndex,
    trunc: Optional[TruncationSpec],
) -> FourierField:
    """The field whose values on the ordinals of index are given by vector."""
    vector = np.asarray(vector, dtype=complex)
    keep = vector != 0
    return FourierField(
        coords=index.coords[keep].copy(),
        values=vector[keep],
        time_dim=index.time_dim,
        trunc=trunc,
    )


##########################################################################################


def analytic_norm(f: FourierField, beta: float, beta_t: float = 0.0) -> float:
    """Returns sum_{(n, j)} e^{beta_t ||n||_1 + beta ||j||} |u_hat(n, j)|.

    The spatial weight uses the Euclidean norm of j. With beta_t = 0 the time indices are summed
    with weight 1, which gives the purely spatial analytic norm.
    """
    if f.values.size == 0:
        return 0.0
    n = f.coords[:, :f.time_dim]
    j = f.coords[:, f.time_dim:].astype(float)
    exponent = beta * np.sqrt((j ** 2).sum(axis=1)) + beta_t * np.abs(n).sum(axis=1)
    return float((np.exp(exponent) * np.abs(f.values)).sum())


def time_weight(spec: ProblemSpec) -> float:
    """The weight of the time indices in the space-time norm, beta / 4 unless configured."""
    if spec.weight_beta_time is not None:
        return float(spec.weight_beta_time)
    return spec.weight_beta / 4.0


def space_time_norm(f: FourierField, spec: ProblemSpec, beta: Optional[float] = None) -> float:
    return analytic_norm(f, spec.weight_beta if beta is None else beta, time_weight(spec))


def conjugate_field(u: FourierField) -> FourierField:
    """Returns v_hat(n, j) = conj(u_hat(-n, -j)).

    Raises
    ------
    TruncationAsymmetryError
        If a reflected site lies outside the truncation of u.
    """
    coords = -u.coords
    if u.trunc is not None and coords.shape[0]:
        # Reflection keeps every |n_k|, so only the box bounds can fail.
        inside = lattice.truncation_mask(coords, u.trunc._replace(aux_order=None), u.time_dim)
        if not np.all(inside):
            raise TruncationAsymmetryError(
                f"{int((~inside).sum())} reflected sites fall outside the truncation."
            )
    return u._replace(coords=coords, values=np.conj(u.values))


def phases(f: FourierField, omega: np.ndarray, theta: np.ndarray, t: float) -> np.ndarray:
    """The factors e^{i n.(theta + omega t)} of the entries of f."""
    omega = np.asarray(omega, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if omega.shape != (f.time_dim,) or theta.shape != (f.time_dim,):
        raise DimensionMismatchError("omega and theta need one entry per time direction.")
    n = f.coords[:, :f.time_dim].astype(float)
    return np.exp(1j * (n @ theta + t * (n @ omega)))


def evaluate(
    u: FourierField,
    omega: np.ndarray,
    theta: np.ndarray,
    t: float,
    x: Sequence[float],
) -> complex:
    """Returns sum u_hat(n, j) e^{i n.(theta + omega t)} e^{i j.x} at one point (t, x)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != spatial_dim(u):
        raise DimensionMismatchError("The point x has the wrong dimension.")
    j = u.coords[:, u.time_dim:].astype(float)
    return complex((u.values * phases(u, omega, theta, t) * np.exp(1j * (j @ x))).sum())


def time_slice(
    u: FourierField,
    omega: np.ndarray,
    theta: np.ndarray,
    t: float,
    radius: Optional[int] = None,
) -> SpatialField:
    """Collapses the time indices: u_x(j; t) = sum_n u_hat(n, j) e^{i n.(theta + omega t)}.

    Parameters
    ----------
    radius: Optional[int]
        The sup-norm radius of the returned coefficients; defaults to the spatial truncation
        of u. Entries beyond the radius are discarded.
    """
    d = spatial_dim(u)
    if radius is None:
        if u.trunc is not None:
            radius = u.trunc.J_x
        else:
            radius = int(np.abs(u.coords[:, u.time_dim:]).max()) if u.values.size else 0
    coefficients = np.zeros((2 * radius + 1,) * d, dtype=complex)
    if u.values.size:
        j = u.coords[:, u.time_dim:]
        inside = np.abs(j).max(axis=1) <= radius
        flat = np.ravel_multi_index(tuple((j[inside] + radius).T), coefficients.shape)
        contributions = (u.values * phases(u, omega, theta, t))[inside]
        coefficients = (
            np.bincount(flat, weights=contributions.real, minlength=coefficients.size)
            + 1j * np.bincount(flat, weights=contributions.imag, minlength=coefficients.size)
        ).reshape(coefficients.shape)
    return SpatialField(coefficients=coefficients, radius=radius)
