"""Implements assembly of the linearized operator, its restrictions and linear solves.

With K1 = (u * v)^{*p}, K2 = (u * v)^{*(p-1)} * u * u and K3 = (u * v)^{*(p-1)} * v * v the
operator acts on a pair (x_u, x_v) as

    [ diag(n.omega + j^2) + delta (p+1) K1 *     delta p K2 *                         ]
    [ delta p K3 *                               diag(-n.omega + j^2) + delta (p+1) K1 * ]

so that the entry between sites s and s' of two blocks is the kernel value at s - s'.
"""
import logging
from typing import Callable, Iterator, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from qpnls import field, lattice, nonlinear
from qpnls.data_structures import (
    FourierField,
    FrequencyVector,
    LinearizedOperator,
    ModeSet,
    ProblemSpec,
    SolveReport,
    TruncationSpec,
)
from qpnls.helpers import EmptyRestrictionError, SingularOperatorError


logger = logging.getLogger(__name__)


DENSE_SVD_LIMIT = 400
RESIDUAL_TOLERANCE = 1e-10
_ENTRY_CHUNK = 1 << 20


def restriction(
    trunc: TruncationSpec,
    modes: ModeSet,
    predicate: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    exclude_resonant: bool = False,
    sublattice: bool = False,
    budget: int = lattice.DEFAULT_SITE_BUDGET,
) -> Tuple[lattice.SiteIndex, lattice.SiteIndex]:
    """Builds the u-block and v-block site indices of a restricted operator.

    Parameters
    ----------
    trunc: TruncationSpec
        The truncation the sites are taken from.
    modes: ModeSet
        The modes fixing the lattice and the resonant set.
    predicate: Optional[Callable[[np.ndarray], np.ndarray]]
        A row filter applied to both blocks.
    exclude_resonant: bool
        Whether to remove the resonant sites (-e_k, j_k) from the u-block and (e_k, -j_k) from
        the v-block.
    sublattice: bool
        Whether to keep only the sites of the resonance sublattice j = -sum_k n_k j_k.

    Returns
    -------
    Tuple[lattice.SiteIndex, lattice.SiteIndex]
        The u-block and v-block indices.

    Raises
    ------
    EmptyRestrictionError
        If no site survives in either block.
    """
    if sublattice:
        base = lattice.build_sublattice_index(trunc, modes, budget)
    else:
        base = lattice.build_site_index(trunc, modes, budget)
    u_mask = np.ones(len(base), dtype=bool)
    if predicate is not None:
        u_mask &= np.asarray(predicate(base.coords), dtype=bool)
    v_mask = u_mask.copy()
    if exclude_resonant:
        u_resonant, v_resonant = lattice.resonant_coords(modes)
        u_mask &= lattice.find_rows(u_resonant, base.coords) < 0
        v_mask &= lattice.find_rows(v_resonant, base.coords) < 0
    if not u_mask.any() and not v_mask.any():
        raise EmptyRestrictionError("The restriction retains no lattice site.")
    return base.restrict(u_mask), base.restrict(v_mask)


def _kernel_block(
    kernel: FourierField,
    row_index: lattice.SiteIndex,
    col_index: lattice.SiteIndex,
    factor: complex,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    m = len(col_index)
    if kernel.values.size == 0 or m == 0 or len(row_index) == 0 or factor == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, complex)
    width = col_index.coords.shape[1]
    per_chunk = max(1, _ENTRY_CHUNK // m)
    rows, cols, values = [], [], []
    for start in range(0, kernel.values.size, per_chunk):
        shifts = kernel.coords[start:start + per_chunk]
        amplitudes = kernel.values[start:start + per_chunk]
        targets = (shifts[:, None, :] + col_index.coords[None, :, :]).reshape(-1, width)
        positions = row_index.ordinals(targets)
        hit = positions >= 0
        rows.append(positions[hit])
        cols.append(np.tile(np.arange(m), shifts.shape[0])[hit])
        values.append(np.repeat(factor * amplitudes, m)[hit])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(values)


def _diagonal(index: lattice.SiteIndex, omega: np.ndarray, sign: int) -> np.ndarray:
    n = index.coords[:, :index.time_dim].astype(float)
    j = index.coords[:, index.time_dim:].astype(float)
    return sign * (n @ omega) + (j ** 2).sum(axis=1)


def assemble(
    u: FourierField,
    v: FourierField,
    omega: FrequencyVector,
    spec: ProblemSpec,
    u_index: lattice.SiteIndex,
    v_index: Optional[lattice.SiteIndex] = None,
    method: str = "auto",
    generic: Sequence[int] = (),
) -> LinearizedOperator:
    """Assembles the linearized operator at (u, v) restricted to the given sites.

    Parameters
    ----------
    u: FourierField
        The u coefficients the operator is linearized at.
    v: FourierField
        The v coefficients the operator is linearized at.
    omega: FrequencyVector
        The frequencies of the diagonal.
    spec: ProblemSpec
        The problem parameters.
    u_index: lattice.SiteIndex
        The retained sites of the u-block.
    v_index: Optional[lattice.SiteIndex]
        The retained sites of the v-block; defaults to u_index.

    Returns
    -------
    LinearizedOperator
        The operator, with entries outside the restriction omitted.

    Raises
    ------
    EmptyRestrictionError
    """
    v_index = u_index if v_index is None else v_index
    mu, mv = len(u_index), len(v_index)
    if mu + mv == 0:
        raise EmptyRestrictionError("The restriction retains no lattice site.")
    omega = np.asarray(omega, dtype=float)
    rows = [np.arange(mu), mu + np.arange(mv)]
    cols = [np.arange(mu), mu + np.arange(mv)]
    values = [
        _diagonal(u_index, omega, 1).astype(complex),
        _diagonal(v_index, omega, -1).astype(complex),
    ]
    if spec.delta != 0:
        K1, K2, K3 = nonlinear.kernels(u, v, spec.p, u.trunc, method, generic)
        blocks = (
            (K1, u_index, u_index, spec.delta * (spec.p + 1), 0, 0),
            (K2, u_index, v_index, spec.delta * spec.p, 0, mu),
            (K3, v_index, u_index, spec.delta * spec.p, mu, 0),
            (K1, v_index, v_index, spec.delta * (spec.p + 1), mu, mu),
        )
        for kernel, row_index, col_index, factor, row_offset, col_offset in blocks:
            block_rows, block_cols, block_values = _kernel_block(
                kernel, row_index, col_index, factor
            )
            rows.append(block_rows + row_offset)
            cols.append(block_cols + col_offset)
            values.append(block_values)
    size = mu + mv
    matrix = scipy.sparse.coo_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    ).tocsc()
    matrix.sum_duplicates()
    logger.debug("Assembled a %d x %d operator with %d entries", size, size, matrix.nnz)
    return LinearizedOperator(
        matrix=matrix, u_index=u_index, v_index=v_index, omega=omega, delta=spec.delta
    )


def assemble_T_N(
    u: FourierField,
    v: FourierField,
    omega: FrequencyVector,
    spec: ProblemSpec,
    trunc: TruncationSpec,
    modes: ModeSet,
    sublattice: bool = False,
    method: str = "auto",
    predicate: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> LinearizedOperator:
    """Assembles T_N, the operator off the resonant set with ||n||_1 <= N.

    With sublattice set, only the coset of the resonance sublattice is kept. T_N does not couple
    distinct cosets, so solves with right-hand sides supported on the sublattice are unchanged.
    An optional predicate restricts both blocks further.
    """
    u_index, v_index = restriction(
        trunc, modes, predicate, exclude_resonant=True, sublattice=sublattice
    )
    return assemble(u, v, omega, spec, u_index, v_index, method, modes.generic_indices)


def apply(
    op: LinearizedOperator,
    x_u: FourierField,
    x_v: FourierField,
) -> Tuple[FourierField, FourierField]:
    """Applies the operator to a pair of fields; entries off the restriction are ignored."""
    x = np.concatenate([field.to_vector(x_u, op.u_index), field.to_vector(x_v, op.v_index)])
    y = op.matrix @ x
    mu = len(op.u_index)
    return (
        field.from_vector(y[:mu], op.u_index, x_u.trunc),
        field.from_vector(y[mu:], op.v_index, x_v.trunc),
    )


def _conditioning(
    matrix: scipy.sparse.csc_matrix,
    lu: scipy.sparse.linalg.SuperLU,
) -> Tuple[float, float]:
    size = matrix.shape[0]
    if size <= DENSE_SVD_LIMIT:
        singular_values = np.linalg.svd(matrix.toarray(), compute_uv=False)
        sigma_min = float(singular_values[-1])
        condition = float(singular_values[0] / sigma_min) if sigma_min > 0 else np.inf
        return condition, sigma_min
    inverse = scipy.sparse.linalg.LinearOperator(
        matrix.shape,
        matvec=lu.solve,
        rmatvec=lambda x: lu.solve(np.asarray(x, dtype=complex), trans="H"),
        dtype=complex,
    )
    inverse_norm = float(scipy.sparse.linalg.onenormest(inverse))
    condition = float(scipy.sparse.linalg.norm(matrix, 1)) * inverse_norm
    return condition, 1.0 / inverse_norm if inverse_norm > 0 else np.inf


def solve(
    op: LinearizedOperator,
    rhs_u: FourierField,
    rhs_v: FourierField,
    threshold: float = 0.0,
) -> SolveReport:
    """Solves op x = rhs on the restriction; x vanishes off it.

    Parameters
    ----------
    op: LinearizedOperator
        The restricted operator.
    rhs_u: FourierField
        The u-block of the right-hand side; entries off the restriction are ignored.
    rhs_v: FourierField
        The v-block of the right-hand side.
    threshold: float
        The smallest acceptable singular value estimate.

    Returns
    -------
    SolveReport
        The solution pair with its conditioning diagnostics. A zero right-hand side returns
        the zero pair without factorizing; its diagnostics are NaN.

    Raises
    ------
    SingularOperatorError
        If the factorization breaks down or the smallest singular value estimate falls below
        threshold.
    """
    mu = len(op.u_index)
    rhs = np.concatenate([field.to_vector(rhs_u, op.u_index), field.to_vector(rhs_v, op.v_index)])
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0:
        return SolveReport(
            u=field.from_vector(rhs[:mu], op.u_index, rhs_u.trunc),
            v=field.from_vector(rhs[mu:], op.v_index, rhs_v.trunc),
            condition_estimate=np.nan,
            sigma_min=np.nan,
            min_pivot=np.nan,
            norm_ratio=0.0,
            residual=0.0,
        )
    try:
        lu = scipy.sparse.linalg.splu(op.matrix.astype(complex))
    except RuntimeError as error:
        raise SingularOperatorError(
            f"The restricted operator is singular: {error}", min_pivot=0.0, sigma_min=0.0
        ) from error
    min_pivot = float(np.abs(lu.U.diagonal()).min())
    condition, sigma_min = _conditioning(op.matrix, lu)
    if min_pivot == 0 or sigma_min < threshold:
        raise SingularOperatorError(
            f"The smallest singular value {sigma_min:.3e} is below {threshold:.3e}.",
            min_pivot=min_pivot,
            sigma_min=sigma_min,
        )
    x = lu.solve(rhs)
    residual = float(np.linalg.norm(op.matrix @ x - rhs)) / rhs_norm
    if residual > RESIDUAL_TOLERANCE:
        logger.warning("Linear solve left a relative residual of %.3e", residual)
    logger.debug(
        "Solved a system of size %d: condition %.3e, sigma_min %.3e", rhs.size, condition, sigma_min
    )
    return SolveReport(
        u=field.from_vector(x[:mu], op.u_index, rhs_u.trunc),
        v=field.from_vector(x[mu:], op.v_index, rhs_v.trunc),
        condition_estimate=condition,
        sigma_min=sigma_min,
        min_pivot=min_pivot,
        norm_ratio=float(np.linalg.norm(x)) / rhs_norm,
        residual=residual,
    )


def coordinate_rows(op: LinearizedOperator) -> Iterator[Tuple[int, int, float, float]]:
    """The nonzero entries as (row, col, re, im), column by column."""
    matrix = op.matrix.tocoo()
    order = np.lexsort((matrix.row, matrix.col))
    for position in order:
        value = matrix.data[position]
        row, col = int(matrix.row[position]), int(matrix.col[position])
        yield row, col, float(value.real), float(value.imag)
