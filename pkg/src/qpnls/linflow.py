"""Implements the linearized flow around an approximate quasi-periodic solution.

The flow S_theta(t) solves the real-linear equation

    i psi_t = -Laplace psi + delta (p+1) |u|^{2p} psi + delta p |u|^{2(p-1)} u^2 conj(psi),

with u = u_theta the quasi-periodic solution. Its natural basis is made of the derivatives
w_j = du/da_j and nu_j = -(1/a_j) du/dtheta_j of the solution family, taken at zero amplitude
for the frequencies j that are not modes of u.
"""
import concurrent.futures
import logging
from itertools import repeat
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from qpnls import field, lattice, newton, spectral
from qpnls.data_structures import (
    ApproximateSolution,
    BasisFamily,
    BasisMember,
    DuhamelReport,
    FggDecomposition,
    FlowBoundReport,
    FourierField,
    LinearTrajectory,
    ModeData,
    ModeSet,
    ProblemSpec,
    SpatialField,
    TruncationSpec,
)
from qpnls.helpers import (
    IllConditionedBasisError,
    IntegratorDisagreementError,
    InvalidConfigurationError,
    StepSizeError,
)


logger = logging.getLogger(__name__)


DEFAULT_STEP = 1e-3
DEFAULT_BAND_RADIUS = 2
GRAM_FLOOR = 0.5
SINGULAR_LIMIT = 1e-10
EXTRAPOLATION_TOLERANCE = 0.1
EXTRAPOLATION_FLOOR = 1e-10
DEFECT_CONSTANT_LIMIT = 10.0
IDENTITY_TOLERANCE = 1e-6
COCYCLE_TOLERANCE = 1e-8


def default_horizon(spec: ProblemSpec) -> float:
    """min(10, delta^(-r/3))."""
    if spec.delta == 0:
        return 10.0
    return float(min(10.0, abs(spec.delta) ** (-spec.r / 3)))


def default_time_step(solution: ApproximateSolution) -> float:
    """min(1e-2, 0.1 / max |omega|)."""
    fastest = float(np.max(np.abs(solution.omega))) if solution.omega.size else 0.0
    return min(1e-2, 0.1 / fastest) if fastest > 0 else 1e-2


##########################################################################################


class _Derivative(NamedTuple):
    field: FourierField
    omega: np.ndarray
    samples: Dict[float, Tuple[FourierField, np.ndarray]]


class _MemberProblem(NamedTuple):
    modes: ModeSet
    trunc: TruncationSpec
    a: np.ndarray
    theta: np.ndarray
    index: int
    auxiliary: bool


def _member_problem(base: ApproximateSolution, jprime: Sequence[int]) -> _MemberProblem:
    jprime = tuple(int(c) for c in jprime)
    a = np.asarray(base.mode_data.a, dtype=float)
    theta = np.asarray(base.mode_data.theta, dtype=float)
    if jprime in base.modes.modes:
        index = base.modes.modes.index(jprime)
        return _MemberProblem(base.modes, base.trunc, a, theta, index, False)
    extended = lattice.append_auxiliary_mode(base.modes, jprime)
    trunc = base.trunc._replace(J_x=max(base.trunc.J_x, lattice.mode_radius(extended)))
    return _MemberProblem(
        extended, trunc, np.append(a, 0.0), np.append(theta, 0.0), base.modes.B, True
    )


def _embed(f: FourierField, time_dim: int) -> FourierField:
    """Adds zero time columns until f lives on a lattice with time_dim time directions."""
    extra = time_dim - f.time_dim
    if extra == 0:
        return f
    n, j = f.coords[:, :f.time_dim], f.coords[:, f.time_dim:]
    padding = np.zeros((f.coords.shape[0], extra), dtype=np.int64)
    return f._replace(coords=np.concatenate([n, padding, j], axis=1), time_dim=time_dim)


def _scheme_output(
    spec: ProblemSpec,
    problem: _MemberProblem,
    sweeps: int,
    frozen_omega: Optional[np.ndarray],
    method: str,
) -> Callable[[np.ndarray], Tuple[FourierField, np.ndarray]]:
    def evaluate(a: np.ndarray) -> Tuple[FourierField, np.ndarray]:
        solution = newton.run_scheme(
            spec,
            problem.modes,
            ModeData(a=a, theta=problem.theta),
            problem.trunc._replace(K=sweeps),
            frozen_omega=frozen_omega,
            early_exit=False,
            require_convergence=False,
            skip_zero_amplitudes=True,
            method=method,
        )
        return solution.u_hat, solution.omega
    return evaluate


def _quotient(
    plus: Tuple[FourierField, np.ndarray],
    minus: Tuple[FourierField, np.ndarray],
    width: float,
) -> Tuple[FourierField, np.ndarray]:
    return (
        field.scale(field.add(plus[0], minus[0], -1.0), 1.0 / width),
        (plus[1] - minus[1]) / width,
    )


def _extrapolated_derivative(
    evaluate: Callable[[np.ndarray], Tuple[FourierField, np.ndarray]],
    a: np.ndarray,
    k: int,
    h: float,
    one_sided: bool,
    beta: float,
) -> _Derivative:
    """d/da_k by difference quotients at h and h/2 combined by Richardson extrapolation.

    Central quotients have an O(h^2) error and are combined with weights (4/3, -1/3); the
    one-sided quotients used at a_k = 0 have an O(h) error and are combined with (2, -1).

    Raises
    ------
    StepSizeError
        If the quotients at h and h/2 disagree beyond the tolerance.
    """
    unit = np.eye(a.size)[k]
    steps = (h, h / 2)
    samples = {step: evaluate(a + step * unit) for step in steps}
    if one_sided:
        origin = evaluate(a)
        quotients = [_quotient(samples[step], origin, step) for step in steps]
        weights = (-1.0, 2.0)
    else:
        quotients = [
            _quotient(samples[step], evaluate(a - step * unit), 2 * step) for step in steps
        ]
        weights = (-1.0 / 3.0, 4.0 / 3.0)
    wide, narrow = quotients
    derivative = field.add(field.scale(narrow[0], weights[1]), wide[0], weights[0])
    gap = field.analytic_norm(field.add(wide[0], narrow[0], -1.0), beta)
    size = field.analytic_norm(derivative, beta)
    if gap > max(EXTRAPOLATION_TOLERANCE * size, EXTRAPOLATION_FLOOR):
        raise StepSizeError(
            f"The derivative along a_{k} changes by {gap:.3e} under step halving from h = {h}."
        )
    return _Derivative(
        field=derivative,
        omega=weights[1] * narrow[1] + weights[0] * wide[1],
        samples=samples,
    )


def _check_step(problem: _MemberProblem, h: float) -> None:
    if not problem.auxiliary and problem.a[problem.index] <= h:
        raise StepSizeError(
            f"The step {h} reaches past the amplitude {problem.a[problem.index]} of the mode."
        )


def basis_functions(
    base: ApproximateSolution,
    jprime: Sequence[int],
    spec: ProblemSpec,
    h: float = DEFAULT_STEP,
    method: str = "auto",
) -> BasisMember:
    """The basis pair (w, nu) of the frequency jprime.

    Parameters
    ----------
    base: ApproximateSolution
        The solution the family is built around.
    jprime: Sequence[int]
        A mode of base, or any other spatial frequency; the latter is appended as an auxiliary
        mode and differentiated in the limit of zero amplitude.
    spec: ProblemSpec
        The problem parameters.
    h: float
        The finite-difference step.

    Returns
    -------
    BasisMember
        w = d u_hat / d a (with the frequency dependence of the scheme included), the secular
        rate i (n . d omega / d a) u_hat and nu = -i n_{j'} u_hat / a_{j'}, which in the zero
        amplitude limit becomes -i n_{j'} w.

    Raises
    ------
    StepSizeError
        If h is not below the amplitude or the extrapolation fails.
    """
    problem = _member_problem(base, jprime)
    _check_step(problem, h)
    evaluate = _scheme_output(spec, problem, base.iterations, None, method)
    derivative = _extrapolated_derivative(
        evaluate, problem.a, problem.index, h, problem.auxiliary, spec.weight_beta_prime
    )
    B = base.modes.B
    domega_da = derivative.omega[:B]
    u_hat = _embed(base.u_hat, problem.modes.B)
    n = u_hat.coords[:, :problem.modes.B].astype(float)
    rates = 1j * (n[:, :B] @ domega_da)
    w_secular = field.make_field(u_hat.coords, rates * u_hat.values, problem.modes.B, None)
    w = derivative.field
    if problem.auxiliary:
        nu = w._replace(values=-1j * w.coords[:, problem.index] * w.values)
        wide, narrow = derivative.samples[h][1], derivative.samples[h / 2][1]
        # The auxiliary frequency is even in the amplitude.
        omega = np.append(base.omega, (4.0 * narrow[-1] - wide[-1]) / 3.0)
    else:
        factor = -1j * u_hat.coords[:, problem.index] / problem.a[problem.index]
        nu = u_hat._replace(values=factor * u_hat.values)
        omega = np.asarray(base.omega, dtype=float)
    return BasisMember(
        jprime=tuple(int(c) for c in jprime),
        w=w,
        w_secular=w_secular,
        nu=nu,
        omega=omega,
        theta=problem.theta,
        domega_da=domega_da,
        auxiliary=problem.auxiliary,
    )


def decompose_fgg(
    member: BasisMember,
    base: ApproximateSolution,
    spec: ProblemSpec,
    h: float = DEFAULT_STEP,
    method: str = "auto",
) -> FggDecomposition:
    """Splits du/da into f (frozen frequencies), gamma (through omega) and the secular g.

    The f part is the derivative of the scheme run with omega held at the member frequencies;
    gamma is what the frequency dependence adds; g = t * g_rate.
    """
    problem = _member_problem(base, member.jprime)
    _check_step(problem, h)
    evaluate = _scheme_output(spec, problem, base.iterations, member.omega, method)
    frozen = _extrapolated_derivative(
        evaluate, problem.a, problem.index, h, problem.auxiliary, spec.weight_beta_prime
    )
    gamma = field.add(member.w, frozen.field, -1.0)
    return FggDecomposition(
        f=frozen.field,
        gamma=gamma,
        g_rate=member.w_secular,
        gamma_norm=field.analytic_norm(gamma, spec.weight_beta_prime),
        g_rate_norm=field.analytic_norm(member.w_secular, spec.weight_beta_prime),
    )


##########################################################################################


def _field_radius(f: FourierField) -> int:
    j = f.coords[:, f.time_dim:]
    return int(np.abs(j).max()) if j.size else 0


def initial_profiles(member: BasisMember, radius: int) -> Tuple[SpatialField, SpatialField]:
    """w_j^(0) and nu_j^(0), the basis pair at t = 0 as spatial fields of the given radius."""
    return (
        field.time_slice(member.w, member.omega, member.theta, 0.0, radius),
        field.time_slice(member.nu, member.omega, member.theta, 0.0, radius),
    )


def _real_columns(profile: SpatialField) -> np.ndarray:
    flat = profile.coefficients.reshape(-1)
    return np.concatenate([flat.real, flat.imag])


def spanning_matrix(
    members: Dict[Tuple[int, ...], BasisMember],
    band_radius: int,
) -> np.ndarray:
    """Real columns [Re; Im] of w_j^(0) and nu_j^(0) on the band ||j||_inf <= band_radius.

    The columns come in pairs (w, nu) in the sorted order of the member frequencies.
    """
    columns = []
    for jprime in sorted(members):
        w0, nu0 = initial_profiles(members[jprime], band_radius)
        columns.extend([_real_columns(w0), _real_columns(nu0)])
    return np.stack(columns, axis=1)


def gram_spanning_check(family: BasisFamily, floor: float = GRAM_FLOOR) -> Tuple[float, bool]:
    """The smallest singular value of the real basis on the band and whether it clears floor."""
    matrix = spanning_matrix(family.members, family.band_radius)
    singular = float(np.linalg.svd(matrix, compute_uv=False).min())
    return singular, singular >= floor


def build_basis_family(
    base: ApproximateSolution,
    spec: ProblemSpec,
    band_radius: int = DEFAULT_BAND_RADIUS,
    h: float = DEFAULT_STEP,
    threads: Optional[int] = None,
    method: str = "auto",
) -> BasisFamily:
    """Builds one basis pair for every frequency of the band ||j||_inf <= band_radius.

    Frequencies that are modes of base are differentiated along their amplitude; the others
    are appended one at a time as auxiliary modes of zero amplitude. The members are computed
    concurrently.

    Raises
    ------
    InvalidConfigurationError
        If the band does not hold every mode.
    """
    if band_radius < lattice.mode_radius(base.modes):
        raise InvalidConfigurationError(
            f"The band radius {band_radius} does not cover the modes of the solution."
        )
    frequencies = [
        tuple(int(c) for c in j)
        for j in spectral.frequencies(band_radius, base.modes.d).reshape(-1, base.modes.d)
    ]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
        computed = list(
            executor.map(basis_functions, repeat(base), frequencies, repeat(spec), repeat(h),
                         repeat(method))
        )
    members = dict(zip(frequencies, computed))
    matrix = spanning_matrix(members, band_radius)
    singular = float(np.linalg.svd(matrix, compute_uv=False).min())
    defect = 0.0
    for member in computed:
        w0, nu0 = initial_profiles(member, max(_field_radius(member.w), _field_radius(member.nu)))
        difference = nu0.coefficients - 1j * w0.coefficients
        defect = max(defect, float(np.sqrt((np.abs(difference) ** 2).sum())))
    logger.info(
        "Basis of %d members: min singular value %.6f, nu - i w defect %.3e",
        len(members), singular, defect,
    )
    return BasisFamily(
        members=members,
        gram=matrix.T @ matrix,
        min_singular=singular,
        ivnu_defect=defect,
        band_radius=band_radius,
    )


def expand_in_basis(
    psi: SpatialField,
    family: BasisFamily,
) -> Tuple[Dict[Tuple[int, ...], float], Dict[Tuple[int, ...], float], float]:
    """Real coefficients with psi = sum_j alpha_j nu_j^(0) + beta_j w_j^(0) on the band.

    Returns
    -------
    Tuple[Dict, Dict, float]
        alpha and beta keyed by frequency, and the l2 norm of the least-squares residual.

    Raises
    ------
    IllConditionedBasisError
        If the basis is numerically degenerate.
    """
    if family.min_singular < SINGULAR_LIMIT:
        raise IllConditionedBasisError(
            f"The basis has smallest singular value {family.min_singular:.3e}."
        )
    matrix = spanning_matrix(family.members, family.band_radius)
    target = _real_columns(spectral.resize(psi, family.band_radius))
    solution, *_ = np.linalg.lstsq(matrix, target, rcond=None)
    residual = float(np.linalg.norm(matrix @ solution - target))
    order = sorted(family.members)
    beta = {jprime: float(solution[2 * i]) for i, jprime in enumerate(order)}
    alpha = {jprime: float(solution[2 * i + 1]) for i, jprime in enumerate(order)}
    return alpha, beta, residual


##########################################################################################


def potentials(u: np.ndarray, delta: float, p: int) -> Tuple[np.ndarray, np.ndarray]:
    """V = delta (p+1) |u|^{2p} and W = delta p |u|^{2(p-1)} u^2 on grid values of u."""
    modulus = np.abs(u) ** 2
    return delta * (p + 1) * modulus ** p, delta * p * modulus ** (p - 1) * u ** 2


def potential_step(psi: np.ndarray, V: np.ndarray, W: np.ndarray, tau: float) -> np.ndarray:
    """Exact flow of i psi_t = V psi + W conj(psi) over tau with V, W frozen.

    The generator of (psi, conj psi) squares to -(V^2 - |W|^2), so the flow is
    cos(lambda tau) + sin(lambda tau) / lambda times the generator.
    """
    lam = np.sqrt(np.maximum(V ** 2 - np.abs(W) ** 2, 0.0))
    drift = -1j * (V * psi + W * np.conj(psi))
    return np.cos(lam * tau) * psi + tau * np.sinc(lam * tau / np.pi) * drift


class LinearizedPropagator:
    """Strang splitting for the linearized flow around a quasi-periodic solution.

    Each step applies half a potential step, the exact free flow and another half potential
    step, the potentials being frozen at the middle of their half step.
    """

    def __init__(self, base: ApproximateSolution, spec: ProblemSpec, grid_size: int) -> None:
        self.spec = spec
        self.grid_size = grid_size
        self.d = field.spatial_dim(base.u_hat)
        self.sampler = spectral.QuasiPeriodicSampler(
            base.u_hat, base.omega, base.mode_data.theta, grid_size
        )
        self.symbol = spectral.laplacian_symbol(grid_size, self.d)

    def potentials_at(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        return potentials(self.sampler.values(t), self.spec.delta, self.spec.p)

    def _half_step(self, state: np.ndarray, t: float, tau: float) -> np.ndarray:
        if self.spec.delta == 0:
            return state
        V, W = self.potentials_at(t)
        values = potential_step(spectral.spectrum_to_grid(state), V, W, tau)
        return spectral.grid_to_spectrum(values, self.d)

    def run(
        self,
        state: np.ndarray,
        T: float,
        dt: float,
        samples: int = 2,
        start: float = 0.0,
    ) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Integrates an FFT-ordered spectrum from start over a time T, which may be negative.

        Returns the sample times, counted from start, and the spectra at those times.
        """
        steps = max(1, int(np.ceil(abs(T) / dt - 1e-9)))
        tau = T / steps
        kinetic = np.exp(-1j * self.symbol * tau)
        recorded = np.unique(np.rint(np.linspace(0, steps, max(samples, 2))).astype(int))
        wanted = set(recorded.tolist())
        states = [state] if 0 in wanted else []
        for step in range(steps):
            t = start + step * tau
            state = self._half_step(state, t + tau / 4, tau / 2)
            state = state * kinetic
            state = self._half_step(state, t + 3 * tau / 4, tau / 2)
            if step + 1 in wanted:
                states.append(state)
        return recorded * tau, states


def _trajectory(
    times: np.ndarray,
    states: List[np.ndarray],
    d: int,
    beta: float,
) -> LinearTrajectory:
    stacked = np.stack(states)
    l2 = spectral.spectral_l2_norm(stacked, d)
    return LinearTrajectory(
        times=times,
        states=stacked,
        l2_norms=l2,
        analytic_norms=spectral.spectral_analytic_norm(stacked, d, beta),
        growth=float(l2.max() / l2[0]) if l2[0] > 0 else 0.0,
    )


def evolve_linearized(
    psi0: SpatialField,
    base: ApproximateSolution,
    T: float,
    dt: float,
    spec: ProblemSpec,
    samples: int = 11,
    grid_size: Optional[int] = None,
    halving_tolerance: Optional[float] = None,
) -> LinearTrajectory:
    """Evolves psi0 under the linearized flow S_theta(t) around base over [0, T].

    Parameters
    ----------
    psi0: SpatialField
        The initial datum.
    base: ApproximateSolution
        The solution the flow is linearized at, with its phases theta.
    T: float
        The final time; negative times run the flow backwards.
    dt: float
        The step bound.
    samples: int
        The number of equally spaced sample times, both ends included.
    grid_size: Optional[int]
        The spatial grid; by default large enough for the products of the potential.
    halving_tolerance: Optional[float]
        When given, the run is repeated with dt / 2 and the two trajectories must agree to
        this tolerance.

    Returns
    -------
    LinearTrajectory
        Sampled FFT-ordered spectra and their norms; growth is max ||psi(t)|| / ||psi0||.

    Raises
    ------
    IntegratorDisagreementError
        If step halving changes the trajectory beyond halving_tolerance.
    """
    d = spectral.spatial_dimension(psi0)
    grid_size = grid_size or spectral.default_grid_size(max(psi0.radius, base.trunc.J_x), spec.p)
    propagator = LinearizedPropagator(base, spec, grid_size)
    initial = spectral.to_spectrum(psi0, grid_size)
    times, states = propagator.run(initial, T, dt, samples)
    if halving_tolerance is not None:
        _, finer = LinearizedPropagator(base, spec, grid_size).run(initial, T, dt / 2, samples)
        gap = float(np.max(spectral.spectral_l2_norm(np.stack(states) - np.stack(finer), d)))
        if gap > halving_tolerance:
            raise IntegratorDisagreementError(
                f"Halving the step changes the linearized flow by {gap:.3e}."
            )
    return _trajectory(times, states, d, spec.weight_beta_prime)


def cocycle_defect(
    psi0: SpatialField,
    base: ApproximateSolution,
    t: float,
    dt: float,
    spec: ProblemSpec,
    grid_size: Optional[int] = None,
) -> float:
    """Relative defect ||S_{theta + omega t}(-t) S_theta(t) psi0 - psi0|| / ||psi0||."""
    grid_size = grid_size or spectral.default_grid_size(max(psi0.radius, base.trunc.J_x), spec.p)
    d = spectral.spatial_dimension(psi0)
    initial = spectral.to_spectrum(psi0, grid_size)
    _, forward = LinearizedPropagator(base, spec, grid_size).run(initial, t, dt)
    shifted = newton.shift_phases(base, t)
    _, backward = LinearizedPropagator(shifted, spec, grid_size).run(forward[-1], -t, dt)
    size = float(spectral.spectral_l2_norm(initial, d))
    return float(spectral.spectral_l2_norm(backward[-1] - initial, d)) / size if size else 0.0


def random_unit_data(radius: int, d: int, generator: np.random.Generator) -> SpatialField:
    """A complex Gaussian spatial field of l2 norm one."""
    shape = (2 * radius + 1,) * d
    coefficients = generator.standard_normal(shape) + 1j * generator.standard_normal(shape)
    coefficients /= np.sqrt((np.abs(coefficients) ** 2).sum())
    return SpatialField(coefficients=coefficients, radius=radius)


def flow_norm_bound(
    base: ApproximateSolution,
    spec: ProblemSpec,
    samples: int = 20,
    T: Optional[float] = None,
    dt: Optional[float] = None,
    seed: int = 0,
    radius: Optional[int] = None,
    threads: Optional[int] = None,
) -> FlowBoundReport:
    """Measures ||S(t) psi0|| against 1 + 2|t| and 1 + |t| for random unit psi0.

    The initial data are drawn with seeds spawned from seed; the cocycle identity is checked
    on the first of them.
    """
    T = default_horizon(spec) if T is None else T
    dt = default_time_step(base) if dt is None else dt
    radius = base.trunc.J_x if radius is None else radius
    d = base.modes.d
    seeds = np.random.SeedSequence(seed).spawn(samples)
    data = [random_unit_data(radius, d, np.random.default_rng(s)) for s in seeds]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
        trajectories = list(
            executor.map(
                evolve_linearized, data, repeat(base), repeat(T), repeat(dt), repeat(spec),
                repeat(41),
            )
        )
    times = np.abs(trajectories[0].times)
    norms = np.stack([trajectory.l2_norms for trajectory in trajectories])
    worst = float((norms / (1 + 2 * times)).max())
    worst_tight = float((norms / (1 + times)).max())
    growth = float(max(trajectory.growth for trajectory in trajectories))
    defect = cocycle_defect(data[0], base, T, dt, spec)
    passed = worst <= 1.0 and defect <= COCYCLE_TOLERANCE
    logger.info(
        "Flow bound over %d samples up to t = %.3g: ratio %.4f (1+2t), %.4f (1+t), cocycle %.2e",
        samples, T, worst, worst_tight, defect,
    )
    return FlowBoundReport(
        horizon=float(T),
        samples=samples,
        worst_ratio=worst,
        worst_ratio_tight=worst_tight,
        growth=growth,
        cocycle_defect=defect,
        passed=bool(passed),
    )


##########################################################################################


class _MemberDefect:
    """Evaluates the linearized-equation defect R = i Phi_t + Laplace Phi - V Phi - W conj(Phi)."""

    def __init__(
        self,
        coefficients: FourierField,
        secular: Optional[FourierField],
        member: BasisMember,
        propagator: LinearizedPropagator,
    ) -> None:
        self.propagator = propagator
        self.sampler = spectral.QuasiPeriodicSampler(
            coefficients, member.omega, member.theta, propagator.grid_size, secular
        )

    def state(self, t: float) -> np.ndarray:
        return self.sampler.spectrum(t)

    def __call__(self, t: float) -> np.ndarray:
        phi = self.sampler.spectrum(t)
        values = spectral.spectrum_to_grid(phi)
        V, W = self.propagator.potentials_at(t)
        potential = spectral.grid_to_spectrum(V * values + W * np.conj(values), self.propagator.d)
        derivative = self.sampler.time_derivative_spectrum(t)
        return 1j * derivative - self.propagator.symbol * phi - potential


def _identity_residual(
    defect: _MemberDefect,
    base: ApproximateSolution,
    spec: ProblemSpec,
    T: float,
    dt: float,
    nodes: int = 9,
) -> float:
    """Relative gap in Phi(T) = S(T) Phi(0) + int_0^T S(T, s) (-i R(s)) ds (trapezoid rule)."""
    grid_size, d = defect.propagator.grid_size, defect.propagator.d
    _, free = defect.propagator.run(defect.state(0.0), T, dt)
    quadrature = np.linspace(0.0, T, nodes)
    weights = np.full(nodes, T / (nodes - 1))
    weights[[0, -1]] /= 2
    integral = np.zeros_like(free[-1])
    for s, weight in zip(quadrature, weights):
        propagator = LinearizedPropagator(newton.shift_phases(base, s), spec, grid_size)
        _, evolved = propagator.run(-1j * defect(s), T - s, dt)
        integral = integral + weight * evolved[-1]
    target = defect.state(T)
    gap = float(spectral.spectral_l2_norm(target - free[-1] - integral, d))
    size = float(spectral.spectral_l2_norm(target, d))
    return gap / size if size else gap


def duhamel_basis_check(
    family: BasisFamily,
    base: ApproximateSolution,
    spec: ProblemSpec,
    T: Optional[float] = None,
    dt: Optional[float] = None,
    samples: int = 21,
    identity_window: float = 1.0,
) -> DuhamelReport:
    """Checks that every basis function solves the linearized equation up to (1 + t) delta^r.

    The defect R of w_j (secular term included) and nu_j is sampled on [0, T]; its constant is
    max_t ||R(t)|| / ((1 + t) |delta|^r), or max_t ||R(t)|| when delta = 0. On the window
    [0, min(T, identity_window)] the variation-of-constants identity is checked for the first
    member against the propagator.
    """
    T = default_horizon(spec) if T is None else T
    dt = default_time_step(base) if dt is None else dt
    members = [family.members[jprime] for jprime in sorted(family.members)]
    radius = max(
        [base.trunc.J_x] + [max(_field_radius(m.w), _field_radius(m.nu)) for m in members]
    )
    grid_size = spectral.default_grid_size(radius, spec.p)
    propagator = LinearizedPropagator(base, spec, grid_size)
    d = propagator.d
    times = np.linspace(0.0, T, samples)
    scale = abs(spec.delta) ** spec.r
    constants = {}
    first = None
    for member in members:
        checks = [
            _MemberDefect(member.w, member.w_secular, member, propagator),
            _MemberDefect(member.nu, None, member, propagator),
        ]
        if first is None:
            first = checks[0]
        norms = np.asarray(
            [[float(spectral.spectral_l2_norm(check(t), d)) for t in times] for check in checks]
        )
        if scale > 0:
            constants[member.jprime] = float((norms / ((1 + times) * scale)).max())
        else:
            constants[member.jprime] = float(norms.max())
    max_constant = max(constants.values()) if constants else 0.0
    identity = _identity_residual(first, base, spec, min(T, identity_window), dt) if first else 0.0
    passed = max_constant <= DEFECT_CONSTANT_LIMIT and identity <= IDENTITY_TOLERANCE
    logger.info(
        "Basis defect constant %.3e, Duhamel identity residual %.3e", max_constant, identity
    )
    return DuhamelReport(
        times=times,
        defect_constants=constants,
        max_constant=max_constant,
        identity_residual=identity,
        passed=bool(passed),
    )
