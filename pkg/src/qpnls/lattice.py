"""Implements the index arithmetic of the truncated space-time Fourier lattice Z^{B+d}.

Sites are stored as integer rows (n_1, ..., n_B, j_1, ..., j_d). A SiteIndex enumerates the
retained sites in the canonical order, lexicographic on (j, n), and maps sites to dense
ordinals and back.
"""
from math import comb
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from qpnls.data_structures import LatticeSite, ModeSet, TruncationSpec
from qpnls.helpers import SiteCapacityError


DEFAULT_SITE_BUDGET = 5_000_000
_KEY_LIMIT = 2 ** 62


##########################################################################################


def mode_matrix(modes: ModeSet) -> np.ndarray:
    """Returns the B x d integer matrix whose rows are the mode frequencies j_k."""
    return np.asarray(modes.modes, dtype=np.int64).reshape(modes.B, modes.d)


def mode_radius(modes: ModeSet) -> int:
    """The largest sup norm of a mode."""
    return int(np.max(np.abs(mode_matrix(modes))))


def default_spatial_radius(modes: ModeSet, N: int, p: int) -> int:
    """Default J_x = J + p N max ||j_k||, J being the radius of the generic modes."""
    matrix = mode_matrix(modes)
    J = int(np.max(np.abs(matrix[list(modes.generic_indices)])))
    return J + p * N * mode_radius(modes)


def append_auxiliary_mode(modes: ModeSet, tilde_j: Sequence[int]) -> ModeSet:
    """Appends tilde_j as a non-generic mode, realising the index set B_J u {tilde_j}."""
    return ModeSet(
        modes=tuple(modes.modes) + (tuple(int(c) for c in tilde_j),),
        generic_indices=tuple(modes.generic_indices),
        tilde_j=None,
    )


def l1_ball(
    B: int,
    N: int,
    generic: Optional[Sequence[int]] = None,
    aux_order: Optional[int] = None,
) -> np.ndarray:
    """Enumerates {n in Z^B : ||n||_1 <= N}, optionally capping the non-generic excitations.

    Parameters
    ----------
    B: int
        The number of time directions.
    N: int
        The l1 radius.
    generic: Optional[Sequence[int]]
        The generic directions; only used together with aux_order.
    aux_order: Optional[int]
        The largest value allowed for the sum of |n_k| over the non-generic directions.

    Returns
    -------
    np.ndarray
        An integer array of shape (count, B).
    """
    generic_set = set(generic or ())
    rows = np.zeros((1, 0), dtype=np.int64)
    used = np.zeros(1, dtype=np.int64)
    aux_used = np.zeros(1, dtype=np.int64)
    for axis in range(B):
        values = np.arange(-N, N + 1, dtype=np.int64)
        grown_rows = np.repeat(rows, values.size, axis=0)
        grown_values = np.tile(values, rows.shape[0])
        grown_used = np.repeat(used, values.size) + np.abs(grown_values)
        grown_aux = np.repeat(aux_used, values.size)
        if aux_order is not None and axis not in generic_set:
            grown_aux = grown_aux + np.abs(grown_values)
        keep = grown_used <= N
        if aux_order is not None:
            keep &= grown_aux <= aux_order
        rows = np.column_stack([grown_rows[keep], grown_values[keep]])
        used = grown_used[keep]
        aux_used = grown_aux[keep]
    return rows.reshape(-1, B)


def l1_ball_size(B: int, N: int) -> int:
    """Closed-form count of {n in Z^B : ||n||_1 <= N}."""
    return sum(comb(B, k) * comb(N, k) * 2 ** k for k in range(min(B, N) + 1))


def site_count(B: int, d: int, N: int, J_x: int) -> int:
    """Closed-form number of sites of the truncation box, simplex count times cube count."""
    return l1_ball_size(B, N) * (2 * J_x + 1) ** d


def truncation_mask(
    coords: np.ndarray,
    trunc: TruncationSpec,
    time_dim: int,
    generic: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Flags the rows of coords lying inside the truncation."""
    n = coords[:, :time_dim]
    j = coords[:, time_dim:]
    inside = np.abs(n).sum(axis=1) <= trunc.N
    if j.shape[1]:
        inside &= np.abs(j).max(axis=1) <= trunc.J_x
    if trunc.aux_order is not None:
        aux_axes = [axis for axis in range(time_dim) if axis not in set(generic or ())]
        if aux_axes:
            inside &= np.abs(n[:, aux_axes]).sum(axis=1) <= trunc.aux_order
    return inside


def sublattice_mask(coords: np.ndarray, modes: ModeSet) -> np.ndarray:
    """Flags the rows of coords on the resonance sublattice j = -sum_k n_k j_k.

    Every convolution product of the resonant sites stays on this sublattice, so fields built
    from the ansatz by the Newton scheme are supported there.
    """
    n = coords[:, :modes.B]
    j = coords[:, modes.B:]
    return np.all(j == -n @ mode_matrix(modes), axis=1)


##########################################################################################


def encode(*arrays: np.ndarray) -> Tuple[np.ndarray, ...]:
    """Encodes the rows of integer arrays into int64 keys that agree across the arrays.

    Keys are mixed-radix encodings over the joint bounding box; when the box is too large to
    fit in 62 bits the rows are ranked jointly instead.
    """
    non_empty = [array for array in arrays if array.shape[0]]
    if not non_empty:
        return tuple(np.zeros(0, dtype=np.int64) for _ in arrays)
    stacked = np.concatenate(non_empty, axis=0)
    lows = stacked.min(axis=0)
    radices = stacked.max(axis=0) - lows + 1
    if np.prod(radices.astype(float)) < _KEY_LIMIT:
        strides = np.ones(radices.size, dtype=np.int64)
        for axis in range(radices.size - 2, -1, -1):
            strides[axis] = strides[axis + 1] * radices[axis + 1]
        return tuple(((array - lows) * strides).sum(axis=1).astype(np.int64) for array in arrays)
    _, inverse = np.unique(stacked, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1).astype(np.int64)
    keys = []
    start = 0
    for array in arrays:
        keys.append(inverse[start:start + array.shape[0]])
        start += array.shape[0]
    return tuple(keys)


def lookup(table_keys: np.ndarray, query_keys: np.ndarray) -> np.ndarray:
    """Positions of query_keys inside the unsorted table_keys, -1 where absent."""
    if table_keys.size == 0:
        return np.full(query_keys.shape, -1, dtype=np.int64)
    order = np.argsort(table_keys, kind="stable")
    sorted_keys = table_keys[order]
    position = np.searchsorted(sorted_keys, query_keys)
    position = np.clip(position, 0, sorted_keys.size - 1)
    found = sorted_keys[position] == query_keys
    return np.where(found, order[position], -1).astype(np.int64)


def find_rows(table: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Positions of the rows of query inside table, -1 where absent."""
    table_keys, query_keys = encode(table, query)
    return lookup(table_keys, query_keys)


##########################################################################################


class SiteIndex:
    """Bijection between the retained lattice sites and dense ordinals.

    The sites are kept in the canonical order, lexicographic on (j, n). The index is immutable
    after construction.
    """

    def __init__(self, coords: np.ndarray, time_dim: int) -> None:
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, coords.shape[1])
        order_columns = np.concatenate([coords[:, time_dim:], coords[:, :time_dim]], axis=1)
        order = np.lexsort(order_columns[:, ::-1].T) if coords.shape[0] else np.zeros(0, int)
        self._coords = coords[order]
        self._coords.setflags(write=False)
        self.time_dim = time_dim

    def __len__(self) -> int:
        return int(self._coords.shape[0])

    @property
    def coords(self) -> np.ndarray:
        return self._coords

    def site(self, ordinal: int) -> LatticeSite:
        row = self._coords[ordinal]
        return LatticeSite(
            n=tuple(int(c) for c in row[:self.time_dim]),
            j=tuple(int(c) for c in row[self.time_dim:]),
        )

    def ordinal(self, site: LatticeSite) -> int:
        """The ordinal of a site, -1 if it is not retained."""
        row = np.asarray([tuple(site.n) + tuple(site.j)], dtype=np.int64)
        return int(self.ordinals(row)[0])

    def ordinals(self, coords: np.ndarray) -> np.ndarray:
        """Vectorised ordinal lookup, -1 for rows that are not retained."""
        return find_rows(self._coords, np.asarray(coords, dtype=np.int64))

    def restrict(self, mask: np.ndarray) -> "SiteIndex":
        """The sub-index of the sites flagged by mask, in the same canonical order."""
        return SiteIndex(self._coords[np.asarray(mask, dtype=bool)], self.time_dim)


def build_site_index(
    trunc: TruncationSpec,
    modes: ModeSet,
    budget: int = DEFAULT_SITE_BUDGET,
    predicate: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> SiteIndex:
    """Enumerates {(n, j) : ||n||_1 <= N, ||j||_inf <= J_x} in canonical order.

    Parameters
    ----------
    trunc: TruncationSpec
        The truncation to enumerate; aux_order, when set, caps the non-generic excitations.
    modes: ModeSet
        The modes fixing the lattice dimensions B and d.
    budget: int
        The largest number of sites allowed.
    predicate: Optional[Callable[[np.ndarray], np.ndarray]]
        An optional row filter applied to the enumerated coordinates.

    Returns
    -------
    SiteIndex
        The index of the retained sites.

    Raises
    ------
    SiteCapacityError
    """
    n_rows = l1_ball(modes.B, trunc.N, modes.generic_indices, trunc.aux_order)
    spatial_count = (2 * trunc.J_x + 1) ** modes.d
    total = n_rows.shape[0] * spatial_count
    if total > budget:
        raise SiteCapacityError(f"The truncation holds {total} sites, above the budget {budget}.")
    axis = np.arange(-trunc.J_x, trunc.J_x + 1, dtype=np.int64)
    j_rows = np.stack(np.meshgrid(*([axis] * modes.d), indexing="ij"), axis=-1).reshape(-1, modes.d)
    coords = np.concatenate(
        [np.repeat(n_rows, j_rows.shape[0], axis=0), np.tile(j_rows, (n_rows.shape[0], 1))],
        axis=1,
    )
    if predicate is not None:
        coords = coords[predicate(coords)]
    return SiteIndex(coords, modes.B)


def build_sublattice_index(
    trunc: TruncationSpec,
    modes: ModeSet,
    budget: int = DEFAULT_SITE_BUDGET,
) -> SiteIndex:
    """Enumerates the truncation sites on the resonance sublattice, one site per n."""
    n_rows = l1_ball(modes.B, trunc.N, modes.generic_indices, trunc.aux_order)
    if n_rows.shape[0] > budget:
        raise SiteCapacityError(
            f"The truncation holds {n_rows.shape[0]} sites, above the budget {budget}."
        )
    coords = np.concatenate([n_rows, -n_rows @ mode_matrix(modes)], axis=1)
    inside = np.abs(coords[:, modes.B:]).max(axis=1) <= trunc.J_x
    return SiteIndex(coords[inside], modes.B)


##########################################################################################


def resonant_coords(modes: ModeSet) -> Tuple[np.ndarray, np.ndarray]:
    """Coordinates of the resonant sites (-e_k, j_k) and (+e_k, -j_k), ordered by k."""
    identity = np.eye(modes.B, dtype=np.int64)
    matrix = mode_matrix(modes)
    return (
        np.concatenate([-identity, matrix], axis=1),
        np.concatenate([identity, -matrix], axis=1),
    )


def resonant_set(modes: ModeSet) -> Tuple[Tuple[LatticeSite, ...], Tuple[LatticeSite, ...]]:
    """Returns the resonant set S as its u-block and v-block sites, ordered by mode.

    Parameters
    ----------
    modes: ModeSet
        The modes; the auxiliary frequency only counts once it has been appended.

    Returns
    -------
    Tuple[Tuple[LatticeSite, ...], Tuple[LatticeSite, ...]]
        The sites (-e_k, j_k) of the u-block and (+e_k, -j_k) of the v-block.
    """
    u_coords, v_coords = resonant_coords(modes)

    def as_sites(coords: np.ndarray) -> Tuple[LatticeSite, ...]:
        return tuple(
            LatticeSite(
                n=tuple(int(c) for c in row[:modes.B]), j=tuple(int(c) for c in row[modes.B:])
            )
            for row in coords
        )

    return as_sites(u_coords), as_sites(v_coords)
