"""Collects the data structures used across the qpnls library."""
import pathlib
from typing import TYPE_CHECKING, Dict, Mapping, NamedTuple, Optional, Tuple

import numpy as np
import scipy.sparse

if TYPE_CHECKING:
    from qpnls.lattice import SiteIndex


FrequencyVector = np.ndarray


class ModeSet(NamedTuple):
    """Characterises the spatial frequencies carried by a quasi-periodic solution.

    The modes field is the ordered sequence of the B spatial frequencies j_k, each a tuple of
    d integers. The k-th mode owns the k-th time direction of the lattice.
    The generic_indices field lists the (0-based) positions of the O(1)-amplitude modes G;
    the remaining modes carry O(delta) amplitudes.
    The tilde_j field is an optional auxiliary spatial frequency outside the ball B_J that is
    appended as an extra mode when the linearized flow needs it.
    """

    modes: Tuple[Tuple[int, ...], ...]
    generic_indices: Tuple[int, ...]
    tilde_j: Optional[Tuple[int, ...]] = None

    @property
    def B(self) -> int:
        return len(self.modes)

    @property
    def d(self) -> int:
        return len(self.modes[0]) if self.modes else 0


class LatticeSite(NamedTuple):
    """A site (n, j) of the space-time Fourier lattice Z^{B+d}.

    The n field is the time-frequency multi-index (length B), the j field the spatial
    frequency (length d).
    """

    n: Tuple[int, ...]
    j: Tuple[int, ...]


class TruncationSpec(NamedTuple):
    """Describes the finite part of the lattice retained by the computation.

    N bounds the l1 norm of the time index n, J_x bounds the sup norm of the spatial index j
    and K is the number of Newton sweeps. The optional aux_order bounds the number of
    excitations sum |n_k| carried by the non-generic modes.
    """

    N: int
    J_x: int
    K: int
    aux_order: Optional[int] = None


class ProblemSpec(NamedTuple):
    """Houses the scalar parameters of the equation i u_t = -Laplace u + delta |u|^{2p} u.

    The weight_beta and weight_beta_prime fields are the analytic weights used for the
    coefficient norms; weight_beta_time is the weight of the time indices in the space-time
    norm and defaults to weight_beta / 4 when omitted. The epsilon field is the excision
    threshold.
    """

    d: int
    p: int
    delta: float
    r: float
    weight_beta: float
    weight_beta_prime: float
    epsilon: float
    weight_beta_time: Optional[float] = None


class ModeData(NamedTuple):
    """Amplitudes a_k > 0 and phases theta_k of the modes, one entry per mode."""

    a: np.ndarray
    theta: np.ndarray


class FourierField(NamedTuple):
    """A sparse complex coefficient field on the space-time lattice.

    The coords field is an integer array of shape (m, B + d) whose rows are the sites (n, j);
    the values field holds the m complex amplitudes. Rows are unique. The trunc field is the
    truncation the field belongs to, or None for intermediate products that are not truncated.
    The dropped_mass field accumulates the l1 mass of convolution products that fell outside
    the truncation while the field was built.
    """

    coords: np.ndarray
    values: np.ndarray
    time_dim: int
    trunc: Optional[TruncationSpec]
    dropped_mass: float = 0.0


class SpatialField(NamedTuple):
    """Spatial Fourier coefficients psi_hat(j) for ||j||_inf <= radius.

    The coefficients array has shape (2 * radius + 1,) * d and is centred, so that index
    j + radius along every axis holds the coefficient of e^{i j.x}.
    """

    coefficients: np.ndarray
    radius: int


class LinearizedOperator(NamedTuple):
    """The linearized operator restricted to a set of sites.

    The matrix field is a square sparse complex matrix in CSC format whose first len(u_index)
    rows and columns belong to the u-block and the remaining ones to the v-block. The u_index
    and v_index fields enumerate the retained sites of each block; omega is the frequency
    snapshot the diagonal was built with.
    """

    matrix: scipy.sparse.csc_matrix
    u_index: "SiteIndex"
    v_index: "SiteIndex"
    omega: np.ndarray
    delta: float


class SolveReport(NamedTuple):
    """Outcome of a linear solve with a restricted linearized operator.

    The u and v fields hold the solution blocks. The condition_estimate field is the one-norm
    condition estimate, sigma_min the matching estimate of the smallest singular value,
    min_pivot the smallest |U_ii| of the factorization, norm_ratio the ratio
    ||x|| / ||rhs|| and residual the relative residual ||op x - rhs|| / ||rhs||.
    """

    u: FourierField
    v: FourierField
    condition_estimate: float
    sigma_min: float
    min_pivot: float
    norm_ratio: float
    residual: float


class IterationRecord(NamedTuple):
    """One line of the Newton iteration log."""

    k: int
    residual_beta: float
    residual_beta_prime: float
    omega: Tuple[float, ...]


class ResidualReport(NamedTuple):
    """The residual xi_hat of an approximate solution and its norms."""

    xi_hat: FourierField
    norm_beta: float
    norm_beta_prime: float
    norm_space_time: float


class ApproximateSolution(NamedTuple):
    """The output of the finitely-iterated Newton construction.

    The u_hat and v_hat fields are the coefficient fields (v_hat the reflected conjugate of
    u_hat), omega the frequency vector, mode_data the amplitudes and phases the construction
    was pinned to and xi_hat the residual field. The residual_norm field is the analytic norm of
    xi_hat with the weight beta'. The iterations field counts the sweeps actually executed and
    history keeps one IterationRecord per sweep (entry 0 is the initial ansatz).
    """

    u_hat: FourierField
    v_hat: FourierField
    omega: FrequencyVector
    mode_data: ModeData
    xi_hat: FourierField
    residual_norm: float
    iterations: int
    history: Tuple[IterationRecord, ...]
    modes: ModeSet
    trunc: TruncationSpec


class DerivativeResidualReport(NamedTuple):
    """Finite-difference derivatives of the residual with a and omega independent.

    The da_norms and domega_norms fields list, per mode, the beta' analytic norm of the
    derivative of xi with respect to a_k and omega_k. The dtheta_auxiliary field is the norm of
    the theta-derivative of xi along a zero-amplitude auxiliary mode. The bound_a and
    bound_omega fields are the targets delta^r and delta^(r-1).
    """

    da_norms: Tuple[float, ...]
    domega_norms: Tuple[float, ...]
    dtheta_auxiliary: float
    bound_a: float
    bound_omega: float
    passed: bool


class VarietySite(NamedTuple):
    """A site of the characteristic variety together with the block it resonates in.

    The block field is "u" for the branch n.omega + j^2 = 0 and "v" for n.omega - j^2 = 0.
    """

    block: str
    site: LatticeSite


class GammaSupport(NamedTuple):
    """Lattice translations generated by the generic part of the ansatz.

    The diagonal field is the Fourier support of |u_1|^{2p}, the cross field the support of
    |u_1|^{2(p-1)} u_1^2. Both are sets of (Delta n, Delta j) tuples of length B + d.
    """

    diagonal: frozenset
    cross: frozenset


class Component(NamedTuple):
    """A maximal connected subset alpha of the characteristic variety.

    The projection field is the set of spatial frequencies of alpha. The resonant_modes field
    lists the modes whose resonant sites lie in alpha; in_a_prime is True when exactly one mode
    does.
    """

    sites: Tuple[VarietySite, ...]
    projection: frozenset
    resonant_modes: Tuple[int, ...]
    in_a_prime: bool


class MeasureFit(NamedTuple):
    """Monte Carlo estimate of the excised measure and its log-log fit fraction ~ C eps^c."""

    eps_grid: Tuple[float, ...]
    fractions: Tuple[float, ...]
    exponent: float
    prefactor: float
    samples: int


class ResonanceReport(NamedTuple):
    """Resonance geometry and excision outcome for one amplitude vector.

    The gamma_dets field lists |det Gamma| over every Gamma matrix (components of the variety
    off the resonant set, with their own n-pattern and with n = 0), m_dets lists |det M| over
    the components in A'. The verdict is True when both minima clear epsilon.
    """

    variety: frozenset
    components: Tuple[Component, ...]
    gamma_dets: Tuple[float, ...]
    m_dets: Tuple[float, ...]
    min_gamma_det: float
    min_m_det: float
    verdict: bool
    measure_fit: Optional[MeasureFit] = None


class BasisMember(NamedTuple):
    """The derivative pair (w, nu) of the solution with respect to (a, theta) of one mode.

    The w field holds the total coefficient derivative d u_hat / d a, w_secular the coefficient
    field multiplying t in the secular term, nu the theta-derivative field. These fields live on
    the lattice of the solution the derivative was taken on, whose frequencies and phases are
    omega and theta. The domega_da field is d omega / d a restricted to the base modes.
    """

    jprime: Tuple[int, ...]
    w: FourierField
    w_secular: FourierField
    nu: FourierField
    omega: np.ndarray
    theta: np.ndarray
    domega_da: np.ndarray
    auxiliary: bool


class BasisFamily(NamedTuple):
    """A family of basis members indexed by spatial frequency with spanning diagnostics."""

    members: Mapping[Tuple[int, ...], BasisMember]
    gram: np.ndarray
    min_singular: float
    ivnu_defect: float
    band_radius: int


class FggDecomposition(NamedTuple):
    """Split of the a-derivative into coefficient (f), frequency (gamma) and secular (g) parts.

    The g_rate field is the coefficient field of g divided by t.
    """

    f: FourierField
    gamma: FourierField
    g_rate: FourierField
    gamma_norm: float
    g_rate_norm: float


class LinearTrajectory(NamedTuple):
    """Samples psi(t) of the linearized flow together with their norms."""

    times: np.ndarray
    states: np.ndarray
    l2_norms: np.ndarray
    analytic_norms: np.ndarray
    growth: float


class FlowBoundReport(NamedTuple):
    """Norm growth of the linearized flow over random unit initial data.

    The worst_ratio field is max ||S(t) psi0|| / (1 + 2|t|), worst_ratio_tight the same
    against 1 + |t|; cocycle_defect is the relative defect of S_{theta + omega t}(-t) S_theta(t)
    on the first sample.
    """

    horizon: float
    samples: int
    worst_ratio: float
    worst_ratio_tight: float
    growth: float
    cocycle_defect: float
    passed: bool


class DuhamelReport(NamedTuple):
    """Defect envelope and Duhamel identity residual of the basis members."""

    times: np.ndarray
    defect_constants: Dict[Tuple[int, ...], float]
    max_constant: float
    identity_residual: float
    passed: bool


class MatchProblem(NamedTuple):
    """The initial-data matching problem F(alpha) = beta on a projection window.

    The u1 and u2 fields are the generic and small parts of the initial data. The window field
    lists the spatial frequencies of the projection, in the order of the target_beta_vec and
    alpha_vec entries. The modes and mode_data fields describe the quasi-periodic ansatz used to
    evaluate F: every window frequency is a mode, generic ones keep their O(1) seed.
    """

    u1: SpatialField
    u2: SpatialField
    target_beta_vec: np.ndarray
    alpha_vec: np.ndarray
    window: Tuple[Tuple[int, ...], ...]
    projection_radius: int
    modes: ModeSet
    seed_coefficients: np.ndarray


class OracleTrajectory(NamedTuple):
    """Samples of the direct split-step integration of the full equation."""

    times: np.ndarray
    states: np.ndarray
    mass: np.ndarray
    hamiltonian: np.ndarray
    dt: float
    radius: int


class RemainderReport(NamedTuple):
    """The remainder w = u - v evolved directly and through the Duhamel fixed point."""

    times: np.ndarray
    direct_norms: np.ndarray
    duhamel_norms: np.ndarray
    agreement: float
    bound_constant: float
    bound_ok: bool


class CauchyResult(NamedTuple):
    """Outcome of the end-to-end validation of a matched quasi-periodic solution."""

    matched_solution: ApproximateSolution
    alpha_vec: np.ndarray
    init_error: float
    init_error_analytic: float
    times: np.ndarray
    trajectory_errors: np.ndarray
    trajectory_errors_analytic: np.ndarray
    envelope: np.ndarray
    mass: np.ndarray
    hamiltonian: np.ndarray
    remainder: Optional[RemainderReport]
    remainder_bound_ok: bool
    passed: bool


class ResonanceSettings(NamedTuple):
    samples: int
    eps_grid: Tuple[float, ...]


class LinflowSettings(NamedTuple):
    band_radius: int
    h: float
    gram_floor: float
    horizon: Optional[float]
    dt: Optional[float]
    flow_samples: int


class CauchySettings(NamedTuple):
    radius_factor: float
    tail_amplitude: float
    horizon: Optional[float]
    samples: int
    envelope_constant: float
    match_tolerance: float
    aux_order: Optional[int]
    halving_tolerance: Optional[float] = 1e-9


class RunConfig(NamedTuple):
    """Everything a CLI run needs, validated before any stage starts.

    The config_hash field is the SHA-256 digest of the configuration file and is written into
    every emitted file. The formats field holds the requested output formats among json, csv
    and bin. The check_excision and check_remainder fields switch the excision gate in front of
    the solve and match stages and the remainder stage of the validation on or off.
    """

    problem: ProblemSpec
    modes: ModeSet
    mode_data: ModeData
    trunc: TruncationSpec
    seed: int
    output_dir: pathlib.Path
    formats: Tuple[str, ...]
    threads: Optional[int]
    resonance: ResonanceSettings
    linflow: LinflowSettings
    cauchy: CauchySettings
    config_hash: str
    check_excision: bool = True
    check_remainder: bool = True
