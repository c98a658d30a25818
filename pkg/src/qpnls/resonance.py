"""Implements the resonance geometry of the lattice equations and the excision of amplitudes.

The characteristic variety collects the sites where the linear divisor n.omega^(0) +- j^2
vanishes. Sites are linked by the translations the generic part u_1 of the ansatz generates,
and the small matrices attached to the connected pieces decide whether an amplitude vector is
kept:

    Gamma = diag(+- n.Omega) + A    on the components off the resonant set,
    M     = the pinned reduction     on the components holding the resonant sites of one mode.
"""
import concurrent.futures
import logging
from collections import defaultdict
from itertools import repeat
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph

from qpnls import lattice
from qpnls.data_structures import (
    Component,
    GammaSupport,
    LatticeSite,
    MeasureFit,
    ModeData,
    ModeSet,
    ProblemSpec,
    ResonanceReport,
    TruncationSpec,
    VarietySite,
)
from qpnls.helpers import DegenerateFitError, ExcisionError, GenericityViolationError


logger = logging.getLogger(__name__)


DEFAULT_EPS_GRID = (1e-1, 1e-2, 1e-3)
SAMPLE_CHUNK = 512

Polynomial = Dict[Tuple[int, ...], float]


def _site_tuple(row: np.ndarray) -> Tuple[int, ...]:
    return tuple(int(c) for c in row)


def _as_site(row: Sequence[int], B: int) -> LatticeSite:
    return LatticeSite(n=tuple(int(c) for c in row[:B]), j=tuple(int(c) for c in row[B:]))


def _coords(sites: Sequence[VarietySite]) -> np.ndarray:
    return np.asarray([tuple(s.site.n) + tuple(s.site.j) for s in sites], dtype=np.int64)


##########################################################################################


def characteristic_variety(modes: ModeSet, trunc: TruncationSpec) -> frozenset:
    """Enumerates {(n, j) : n.omega^(0) + j^2 = 0} (u branch) and n.omega^(0) - j^2 = 0 (v branch).

    The arithmetic is exact: omega^(0)_k = |j_k|^2 is an integer. Sites are taken from the
    whole truncation box, not only the resonance sublattice.

    Returns
    -------
    frozenset
        The VarietySite members.
    """
    n_rows = lattice.l1_ball(modes.B, trunc.N, modes.generic_indices, trunc.aux_order)
    omega0 = (lattice.mode_matrix(modes) ** 2).sum(axis=1)
    axis = np.arange(-trunc.J_x, trunc.J_x + 1, dtype=np.int64)
    grid = np.meshgrid(*([axis] * modes.d), indexing="ij")
    j_rows = np.stack(grid, axis=-1).reshape(-1, modes.d)
    norms = (j_rows ** 2).sum(axis=1)
    by_norm = {int(norm): j_rows[norms == norm] for norm in np.unique(norms)}
    members = set()
    for n, phase in zip(n_rows, n_rows @ omega0):
        for block, norm in (("u", -int(phase)), ("v", int(phase))):
            for j in by_norm.get(norm, ()):
                site = LatticeSite(n=_site_tuple(n), j=_site_tuple(j))
                members.add(VarietySite(block=block, site=site))
    return frozenset(members)


##########################################################################################


def _multiply(f: Dict, g: Dict) -> Dict:
    product: Dict = defaultdict(lambda: defaultdict(float))
    for site_f, poly_f in f.items():
        for site_g, poly_g in g.items():
            site = tuple(a + b for a, b in zip(site_f, site_g))
            target = product[site]
            for exponent_f, coefficient_f in poly_f.items():
                for exponent_g, coefficient_g in poly_g.items():
                    exponent = tuple(a + b for a, b in zip(exponent_f, exponent_g))
                    target[exponent] += coefficient_f * coefficient_g
    return {site: dict(poly) for site, poly in product.items()}


def _symbolic_power(f: Dict, exponent: int, unit: Dict) -> Dict:
    result = unit
    for _ in range(exponent):
        result = _multiply(result, f)
    return result


class KernelTable:
    """Monomial expansions of the kernels generated by the generic part of the ansatz.

    The generic part is u_1 = sum_{k in G} a_k delta_(-e_k, j_k). The table expands
    K1 = (u_1 * v_1)^{*p}, K2 = (u_1 * v_1)^{*(p-1)} * u_1 * u_1 and
    K3 = (u_1 * v_1)^{*(p-1)} * v_1 * v_1 as polynomials in the generic amplitudes, together
    with the first-order frequency shifts Omega_k. Evaluation is vectorised over a batch of
    amplitude vectors.
    """

    KINDS = ("diagonal", "cross_u", "cross_v")

    def __init__(self, modes: ModeSet, p: int) -> None:
        self.modes = modes
        self.p = p
        self.generic = tuple(modes.generic_indices)
        b = len(self.generic)
        matrix = lattice.mode_matrix(modes)
        width = modes.B + modes.d
        origin = (0,) * width
        zero_exponent = (0,) * b
        unit = {origin: {zero_exponent: 1.0}}
        u1, v1 = {}, {}
        for position, k in enumerate(self.generic):
            exponent = tuple(1 if i == position else 0 for i in range(b))
            n = np.zeros(modes.B, dtype=np.int64)
            n[k] = -1
            u1[_site_tuple(np.concatenate([n, matrix[k]]))] = {exponent: 1.0}
            v1[_site_tuple(np.concatenate([-n, -matrix[k]]))] = {exponent: 1.0}
        uv = _multiply(u1, v1)
        lower = _symbolic_power(uv, p - 1, unit)
        self._polynomials = {
            "diagonal": _multiply(lower, uv),
            "cross_u": _multiply(_multiply(lower, u1), u1),
            "cross_v": _multiply(_multiply(lower, v1), v1),
        }
        term = _multiply(self._polynomials["diagonal"], u1)
        self._shifts: List[Polynomial] = []
        for k in range(modes.B):
            if k in self.generic:
                position = self.generic.index(k)
                n = np.zeros(modes.B, dtype=np.int64)
                n[k] = -1
                poly = term.get(_site_tuple(np.concatenate([n, matrix[k]])), {})
                shift = {}
                for exponent, coefficient in poly.items():
                    lowered = list(exponent)
                    lowered[position] -= 1
                    shift[tuple(lowered)] = coefficient
                self._shifts.append(shift)
            else:
                base = self._polynomials["diagonal"].get(origin, {})
                self._shifts.append({e: (p + 1) * c for e, c in base.items()})
        self._compiled = {
            kind: {site: self._compile(poly) for site, poly in table.items()}
            for kind, table in self._polynomials.items()
        }
        self._compiled_shifts = [self._compile(poly) for poly in self._shifts]

    @staticmethod
    def _compile(poly: Polynomial) -> Tuple[np.ndarray, np.ndarray]:
        exponents = np.asarray(list(poly.keys()), dtype=float)
        coefficients = np.asarray(list(poly.values()), dtype=float)
        return exponents, coefficients

    @staticmethod
    def _evaluate(compiled: Tuple[np.ndarray, np.ndarray], a: np.ndarray) -> np.ndarray:
        exponents, coefficients = compiled
        if coefficients.size == 0:
            return np.zeros(a.shape[0])
        exponents = exponents.reshape(coefficients.size, a.shape[1])
        monomials = np.prod(a[:, None, :] ** exponents[None, :, :], axis=2)
        return monomials @ coefficients

    def support(self, kind: str) -> frozenset:
        """The sites where the kernel has a nonzero expansion."""
        table = self._polynomials[kind]
        return frozenset(site for site, poly in table.items() if any(poly.values()))

    def values(self, kind: str, differences: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Kernel values at the rows of differences for every amplitude vector, shape (S, m)."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        result = np.zeros((a.shape[0], differences.shape[0]))
        table = self._compiled[kind]
        for column, row in enumerate(differences):
            compiled = table.get(_site_tuple(row))
            if compiled is not None:
                result[:, column] = self._evaluate(compiled, a)
        return result

    def shifts(self, a: np.ndarray) -> np.ndarray:
        """First-order frequency shifts Omega_k for every amplitude vector, shape (S, B)."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        return np.stack([self._evaluate(compiled, a) for compiled in self._compiled_shifts], axis=1)


def generic_amplitudes(mode_data: ModeData, modes: ModeSet) -> np.ndarray:
    return np.asarray(mode_data.a, dtype=float)[list(modes.generic_indices)]


def gamma_support(modes: ModeSet, p: int) -> GammaSupport:
    """Translations generated by the generic modes.

    The diagonal set is the Fourier support of |u_1|^{2p}, the cross set that of
    |u_1|^{2(p-1)} u_1^2. Without generic modes the diagonal set is {0}.
    """
    width = modes.B + modes.d
    if not modes.generic_indices:
        return GammaSupport(diagonal=frozenset({(0,) * width}), cross=frozenset())
    table = KernelTable(modes, p)
    return GammaSupport(diagonal=table.support("diagonal"), cross=table.support("cross_u"))


##########################################################################################


def _links(
    source: np.ndarray,
    target: np.ndarray,
    shifts: frozenset,
    source_offset: int,
    target_offset: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """Graph edges from the rows of source to the rows of target lying source + shift away."""
    rows, cols = [np.zeros(0, np.int64)], [np.zeros(0, np.int64)]
    if source.shape[0] and target.shape[0]:
        for shift in shifts:
            positions = lattice.find_rows(target, source + np.asarray(shift, dtype=np.int64))
            hit = np.flatnonzero(positions >= 0)
            rows.append(hit + source_offset)
            cols.append(positions[hit] + target_offset)
    return np.concatenate(rows), np.concatenate(cols)


def connected_components(
    variety: frozenset,
    gamma: GammaSupport,
    modes: ModeSet,
    size_bound: Optional[int] = None,
) -> Tuple[Component, ...]:
    """Splits the variety into maximal connected subsets.

    Two sites of the same block are linked when their difference lies in the diagonal set; a
    u site s_u and a v site s_v are linked when s_u - s_v lies in the cross set.

    Parameters
    ----------
    variety: frozenset
        The VarietySite members to split.
    gamma: GammaSupport
        The translations.
    modes: ModeSet
        The modes, used to flag resonant sites.
    size_bound: Optional[int]
        The largest admissible component, 2b + d by default.

    Returns
    -------
    Tuple[Component, ...]
        The components in a deterministic order.

    Raises
    ------
    GenericityViolationError
        If a component exceeds the size bound.
    """
    bound = size_bound if size_bound is not None else 2 * len(modes.generic_indices) + modes.d
    sites = sorted(variety, key=lambda s: (s.block, tuple(s.site.n), tuple(s.site.j)))
    if not sites:
        return ()
    width = modes.B + modes.d
    u_sites = [s for s in sites if s.block == "u"]
    v_sites = [s for s in sites if s.block == "v"]
    u_coords = _coords(u_sites) if u_sites else np.zeros((0, width), np.int64)
    v_coords = _coords(v_sites) if v_sites else np.zeros((0, width), np.int64)
    offset = len(u_sites)
    # s_u - s_v in cross means s_v = s_u - shift.
    cross = frozenset(tuple(-c for c in shift) for shift in gamma.cross)
    edges = [
        _links(u_coords, u_coords, gamma.diagonal, 0, 0),
        _links(v_coords, v_coords, gamma.diagonal, offset, offset),
        _links(u_coords, v_coords, cross, 0, offset),
    ]
    row = np.concatenate([edge[0] for edge in edges])
    col = np.concatenate([edge[1] for edge in edges])
    total = len(sites)
    graph = scipy.sparse.coo_matrix((np.ones(row.size), (row, col)), shape=(total, total))
    count, labels = scipy.sparse.csgraph.connected_components(graph, directed=False)
    ordered = u_sites + v_sites
    resonant = _resonant_labels(modes)
    components = []
    for label in range(count):
        members = tuple(
            sorted(
                (ordered[i] for i in np.flatnonzero(labels == label)),
                key=lambda s: (s.block != "u", tuple(s.site.n), tuple(s.site.j)),
            )
        )
        if len(members) > bound:
            raise GenericityViolationError(
                f"A connected component holds {len(members)} sites, above the bound {bound}."
            )
        resonant_modes = tuple(sorted({resonant[s] for s in members if s in resonant}))
        components.append(
            Component(
                sites=members,
                projection=frozenset(tuple(s.site.j) for s in members),
                resonant_modes=resonant_modes,
                in_a_prime=len(resonant_modes) == 1,
            )
        )
    components.sort(key=lambda c: (c.sites[0].block, c.sites[0].site.n, c.sites[0].site.j))
    return tuple(components)


def _resonant_labels(modes: ModeSet) -> Dict[VarietySite, int]:
    """Maps the sites of S to the mode owning them."""
    u_resonant, v_resonant = lattice.resonant_set(modes)
    labels = {VarietySite("u", site): k for k, site in enumerate(u_resonant)}
    labels.update({VarietySite("v", site): k for k, site in enumerate(v_resonant)})
    return labels


def off_resonant_variety(variety: frozenset, modes: ModeSet) -> frozenset:
    resonant = _resonant_labels(modes)
    return frozenset(s for s in variety if s not in resonant)


##########################################################################################


def _pattern(component: Component, n_pattern: Optional[np.ndarray], B: int) -> np.ndarray:
    own = np.asarray([s.site.n for s in component.sites], dtype=float).reshape(-1, B)
    if n_pattern is None:
        return own
    pattern = np.asarray(n_pattern, dtype=float)
    if pattern.ndim == 1:
        return np.tile(pattern, (len(component.sites), 1))
    return pattern


def _component_matrices(
    component: Component,
    n_rows: np.ndarray,
    table: KernelTable,
    a: np.ndarray,
    Omega: np.ndarray,
    p: int,
) -> np.ndarray:
    coords = _coords(component.sites)
    m = coords.shape[0]
    a = np.atleast_2d(a)
    Omega = np.atleast_2d(Omega)
    blocks = np.asarray([s.block for s in component.sites])
    sign = np.where(blocks == "u", 1.0, -1.0)
    matrices = np.zeros((a.shape[0], m, m), dtype=complex)
    differences = coords[:, None, :] - coords[None, :, :]
    is_u = blocks == "u"
    couplings = (
        ("diagonal", is_u[:, None] == is_u[None, :], p + 1),
        ("cross_u", is_u[:, None] & ~is_u[None, :], p),
        ("cross_v", ~is_u[:, None] & is_u[None, :], p),
    )
    for kind, mask, factor in couplings:
        if mask.any():
            matrices[:, mask] = factor * table.values(kind, differences[mask], a)
    diagonal = sign[None, :] * (Omega @ n_rows.T)
    matrices[:, np.arange(m), np.arange(m)] += diagonal
    return matrices


def build_gamma_matrix(
    alpha: Component,
    n_pattern: Optional[np.ndarray],
    mode_data: ModeData,
    Omega: Optional[np.ndarray],
    spec: ProblemSpec,
    modes: ModeSet,
    table: Optional[KernelTable] = None,
) -> np.ndarray:
    """Assembles Gamma = diag(+- n.Omega) + A on a connected set.

    Parameters
    ----------
    alpha: Component
        The connected set.
    n_pattern: Optional[np.ndarray]
        The time indices of the diagonal, one row per site or one row for all sites; the
        sites' own indices when omitted. A zero pattern gives A alone.
    mode_data: ModeData
        The amplitudes; only the generic ones enter.
    Omega: Optional[np.ndarray]
        The B first-order frequency shifts; computed from the generic amplitudes when omitted.
    spec: ProblemSpec
        The problem parameters; p is read.
    modes: ModeSet
        The modes.

    Returns
    -------
    np.ndarray
        The dense |alpha| x |alpha| matrix. A has entries (p+1) K1 between sites of one block,
        p K2 from v to u sites and p K3 from u to v sites.
    """
    table = table or KernelTable(modes, spec.p)
    a = generic_amplitudes(mode_data, modes)
    Omega = table.shifts(a)[0] if Omega is None else np.asarray(Omega, dtype=float)
    n_rows = _pattern(alpha, n_pattern, modes.B)
    return _component_matrices(alpha, n_rows, table, a, Omega, spec.p)[0]


def _phase_matrix(component: Component, theta: np.ndarray) -> np.ndarray:
    n = np.asarray([s.site.n for s in component.sites], dtype=float)
    return np.exp(1j * (n @ theta))


def _pinned_reductions(matrices: np.ndarray, u_positions: np.ndarray) -> np.ndarray:
    """For each u site pinned to 1, solves the rest and reads off the values at the u sites."""
    samples, m, _ = matrices.shape
    q = u_positions.size
    reduced = np.zeros((samples, q, q), dtype=complex)
    for row, pinned in enumerate(u_positions):
        rest = np.setdiff1d(np.arange(m), [pinned])
        values = np.zeros((samples, m), dtype=complex)
        values[:, pinned] = 1.0
        if rest.size:
            block = matrices[:, rest[:, None], rest[None, :]]
            column = matrices[:, rest, pinned]
            try:
                values[:, rest] = -np.linalg.solve(block, column[..., None])[..., 0]
            except np.linalg.LinAlgError:
                for sample in range(samples):
                    try:
                        values[sample, rest] = -np.linalg.solve(block[sample], column[sample])
                    except np.linalg.LinAlgError:
                        values[sample, :] = np.nan
        reduced[:, row, :] = values[:, u_positions]
    return reduced


def build_m_matrix(
    alpha: Component,
    mode_data: ModeData,
    spec: ProblemSpec,
    modes: ModeSet,
    theta: Optional[np.ndarray] = None,
    table: Optional[KernelTable] = None,
) -> np.ndarray:
    """The reduced matrix M of a connected set holding resonant sites.

    Every u site of alpha is pinned to 1 in turn, the remaining sites are solved from the
    linearized operator restricted to alpha, and the resulting values at the u sites form one
    row; the diagonal is 1. With theta given, the operator is assembled from phase-carrying
    coefficients and the diagonal phase conjugation is undone, which yields the same matrix.
    """
    table = table or KernelTable(modes, spec.p)
    a = generic_amplitudes(mode_data, modes)
    n_rows = _pattern(alpha, None, modes.B)
    matrices = _component_matrices(alpha, n_rows, table, a, table.shifts(a), spec.p)
    u_positions = np.flatnonzero([s.block == "u" for s in alpha.sites])
    if theta is None:
        return _pinned_reductions(matrices, u_positions)[0]
    phases = _phase_matrix(alpha, np.asarray(theta, dtype=float))
    phased = matrices * phases[None, :, None] / phases[None, None, :]
    reduced = _pinned_reductions(phased, u_positions)[0]
    u_phases = phases[u_positions]
    return reduced * u_phases[:, None] / u_phases[None, :]


##########################################################################################


class ResonanceStructure:
    """The amplitude-independent part of the analysis: variety and components."""

    def __init__(self, modes: ModeSet, trunc: TruncationSpec, p: int) -> None:
        self.modes = modes
        self.trunc = trunc
        self.p = p
        self.table = KernelTable(modes, p)
        self.gamma = gamma_support(modes, p)
        self.variety = characteristic_variety(modes, trunc)
        self.components = connected_components(self.variety, self.gamma, modes)
        self.off_components = connected_components(
            off_resonant_variety(self.variety, modes), self.gamma, modes
        )
        self.m_components = tuple(c for c in self.components if c.in_a_prime)
        logger.info(
            "Variety of %d sites, %d components, %d in A'",
            len(self.variety), len(self.components), len(self.m_components),
        )

    def determinants(self, a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """|det Gamma| and |det M| for a batch of generic amplitude vectors.

        Returns arrays of shape (S, g) and (S, h): every component off the resonant set
        contributes two Gamma matrices (its own n and n = 0), every A' component one M.
        """
        a = np.atleast_2d(np.asarray(a, dtype=float))
        Omega = self.table.shifts(a)
        gamma_dets = []
        for component in self.off_components:
            for pattern in (None, np.zeros(self.modes.B)):
                n_rows = _pattern(component, pattern, self.modes.B)
                matrices = _component_matrices(component, n_rows, self.table, a, Omega, self.p)
                gamma_dets.append(np.abs(np.linalg.det(matrices)))
        m_dets = []
        for component in self.m_components:
            n_rows = _pattern(component, None, self.modes.B)
            matrices = _component_matrices(component, n_rows, self.table, a, Omega, self.p)
            u_positions = np.flatnonzero([s.block == "u" for s in component.sites])
            reduced = _pinned_reductions(matrices, u_positions)
            m_dets.append(np.nan_to_num(np.abs(np.linalg.det(reduced)), nan=0.0))
        samples = a.shape[0]
        return (
            np.stack(gamma_dets, axis=1) if gamma_dets else np.zeros((samples, 0)),
            np.stack(m_dets, axis=1) if m_dets else np.zeros((samples, 0)),
        )


def _minimum(values: np.ndarray) -> np.ndarray:
    return values.min(axis=1) if values.shape[1] else np.full(values.shape[0], np.inf)


def excision_check(
    mode_data: ModeData,
    spec: ProblemSpec,
    modes: ModeSet,
    trunc: TruncationSpec,
    structure: Optional[ResonanceStructure] = None,
) -> ResonanceReport:
    """Decides whether an amplitude vector survives the excision at threshold epsilon.

    Parameters
    ----------
    mode_data: ModeData
        The amplitudes to check.
    spec: ProblemSpec
        The problem parameters; p and epsilon are read.
    modes: ModeSet
        The modes.
    trunc: TruncationSpec
        The truncation the variety is enumerated in.
    structure: Optional[ResonanceStructure]
        A precomputed structure to reuse.

    Returns
    -------
    ResonanceReport
        The verdict passes iff min |det Gamma| >= epsilon and min |det M| >= epsilon.

    Raises
    ------
    GenericityViolationError
        If a component exceeds 2b + d sites.
    """
    structure = structure or ResonanceStructure(modes, trunc, spec.p)
    gamma_dets, m_dets = structure.determinants(generic_amplitudes(mode_data, modes))
    min_gamma = float(_minimum(gamma_dets)[0])
    min_m = float(_minimum(m_dets)[0])
    verdict = min_gamma >= spec.epsilon and min_m >= spec.epsilon
    logger.info(
        "Excision: min |det Gamma| %.3e, min |det M| %.3e, verdict %s", min_gamma, min_m, verdict
    )
    return ResonanceReport(
        variety=structure.variety,
        components=structure.components,
        gamma_dets=tuple(float(x) for x in gamma_dets[0]),
        m_dets=tuple(float(x) for x in m_dets[0]),
        min_gamma_det=min_gamma,
        min_m_det=min_m,
        verdict=bool(verdict),
    )


def require_excision(
    mode_data: ModeData,
    spec: ProblemSpec,
    modes: ModeSet,
    trunc: TruncationSpec,
    structure: Optional[ResonanceStructure] = None,
) -> ResonanceReport:
    """Runs excision_check and refuses amplitudes inside the excised set.

    Raises
    ------
    ExcisionError
        If min |det Gamma| or min |det M| falls below spec.epsilon.
    """
    report = excision_check(mode_data, spec, modes, trunc, structure)
    if not report.verdict:
        raise ExcisionError(
            f"The amplitudes fall in the excised set at epsilon = {spec.epsilon:g}: "
            f"min |det Gamma| = {report.min_gamma_det:.3e}, "
            f"min |det M| = {report.min_m_det:.3e}."
        )
    return report


##########################################################################################


def _chunk_minima(
    seed: np.random.SeedSequence,
    size: int,
    structure: ResonanceStructure,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    generator = np.random.default_rng(seed)
    b = len(structure.modes.generic_indices)
    a = 1.0 - generator.random((size, b))
    gamma_dets, m_dets = structure.determinants(a)
    return a, _minimum(gamma_dets), _minimum(m_dets)


def sample_determinants(
    spec: ProblemSpec,
    modes: ModeSet,
    trunc: TruncationSpec,
    samples: int,
    seed: int,
    threads: Optional[int] = None,
    structure: Optional[ResonanceStructure] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draws generic amplitude vectors uniformly from (0, 1]^b and records their minima.

    The samples are split in chunks with seeds spawned from the master seed, so the result
    does not depend on the number of worker threads.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray, np.ndarray]
        The amplitudes (samples, b), min |det Gamma| and min |det M| per sample.
    """
    structure = structure or ResonanceStructure(modes, trunc, spec.p)
    sizes = [min(SAMPLE_CHUNK, samples - start) for start in range(0, samples, SAMPLE_CHUNK)]
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
        chunks = list(executor.map(_chunk_minima, seeds, sizes, repeat(structure)))
    return (
        np.concatenate([chunk[0] for chunk in chunks]),
        np.concatenate([chunk[1] for chunk in chunks]),
        np.concatenate([chunk[2] for chunk in chunks]),
    )


def fit_measure(
    minima: np.ndarray,
    eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
) -> MeasureFit:
    """Fits fraction(eps) ~ C eps^c to the bad fractions of a sample of determinant minima.

    Raises
    ------
    DegenerateFitError
        If fewer than two grid points have a bad fraction strictly between 0 and 1.
    """
    eps = np.asarray(sorted(eps_grid), dtype=float)
    fractions = np.asarray([(minima < e).mean() for e in eps])
    usable = (fractions > 0) & (fractions < 1)
    if usable.sum() < 2:
        raise DegenerateFitError(
            f"Only {int(usable.sum())} of {eps.size} thresholds give a bad fraction in (0, 1)."
        )
    exponent, intercept = np.polyfit(np.log(eps[usable]), np.log(fractions[usable]), 1)
    return MeasureFit(
        eps_grid=tuple(float(e) for e in eps),
        fractions=tuple(float(f) for f in fractions),
        exponent=float(exponent),
        prefactor=float(np.exp(intercept)),
        samples=int(minima.size),
    )


def measure_estimate(
    spec: ProblemSpec,
    modes: ModeSet,
    trunc: TruncationSpec,
    samples: int,
    seed: int,
    eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
    threads: Optional[int] = None,
) -> MeasureFit:
    """Monte Carlo estimate of the excised fraction of (0, 1]^b and its exponent c.

    Raises
    ------
    ValueError
        If fewer than 10^3 samples are requested.
    DegenerateFitError
    """
    if samples < 1000:
        raise ValueError("The measure estimate needs at least 1000 samples.")
    _, gamma_minima, m_minima = sample_determinants(spec, modes, trunc, samples, seed, threads)
    fit = fit_measure(np.minimum(gamma_minima, m_minima), eps_grid)
    logger.info("Excised fraction ~ %.3g eps^%.3f", fit.prefactor, fit.exponent)
    return fit


def resonance_report(
    mode_data: ModeData,
    spec: ProblemSpec,
    modes: ModeSet,
    trunc: TruncationSpec,
    samples: int,
    seed: int,
    eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
    threads: Optional[int] = None,
) -> ResonanceReport:
    """The excision report of mode_data together with the Monte Carlo measure fit."""
    structure = ResonanceStructure(modes, trunc, spec.p)
    report = excision_check(mode_data, spec, modes, trunc, structure)
    _, gamma_minima, m_minima = sample_determinants(
        spec, modes, trunc, samples, seed, threads, structure
    )
    fit = fit_measure(np.minimum(gamma_minima, m_minima), eps_grid)
    return report._replace(measure_fit=fit)
