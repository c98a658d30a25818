"""Implements the Cauchy problem: matching initial data with a quasi-periodic solution.

Initial data u0 = u1 + u2, with u1 on the generic modes and u2 = O(delta), are matched by a
quasi-periodic solution v whose coefficients on a projection window are tuned through the map

    F(alpha) = Pi v(0; alpha) - Pi u1,

solved for F(alpha) = Pi u2. The solution is then compared with a direct split-step
integration of the equation, and the remainder w = u - v is evolved both directly and through
the Duhamel formula around v.
"""
import concurrent.futures
import logging
from itertools import repeat
from typing import List, Optional, Sequence, Tuple

import numpy as np

from qpnls import field, lattice, linflow, newton, resonance, spectral
from qpnls.data_structures import (
    ApproximateSolution,
    CauchyResult,
    CauchySettings,
    MatchProblem,
    ModeData,
    ModeSet,
    OracleTrajectory,
    ProblemSpec,
    RemainderReport,
    SpatialField,
    TruncationSpec,
)
from qpnls.helpers import (
    AdmissibilityError,
    BlowUpError,
    ConvergenceError,
    DimensionMismatchError,
    IntegratorDisagreementError,
    ProjectionOverflowError,
    SingularOperatorError,
    stage,
)


logger = logging.getLogger(__name__)


ADMISSIBLE_CONSTANT = 10.0
AMPLITUDE_FLOOR = 1e-15
MAX_WINDOW_MODES = 64
MATCH_STEP = 1e-7
MATCH_ITERATIONS = 20
DAMPING_HALVINGS = 10
BLOW_UP_FACTOR = 10.0
MAX_HALVINGS = 4
PICARD_ITERATIONS = 50
PICARD_TOLERANCE = 1e-14
DUHAMEL_STEP = 1e-2
ENVELOPE_CONSTANT = 10.0
AGREEMENT_TOLERANCE = 1e-6
HALVING_TOLERANCE = 1e-9


def projection_radius(spec: ProblemSpec, modes: ModeSet, radius_factor: float = 2.0) -> int:
    """ceil(|log10 delta|) * radius_factor, at least the radius of the modes."""
    if spec.delta == 0:
        return lattice.mode_radius(modes)
    radius = int(np.ceil(np.ceil(abs(np.log10(abs(spec.delta)))) * radius_factor))
    return max(radius, lattice.mode_radius(modes))


def default_horizon(spec: ProblemSpec) -> float:
    """delta^(-1.2), or 10 when delta = 0."""
    return 10.0 if spec.delta == 0 else float(abs(spec.delta) ** -1.2)


def _coefficient(psi: SpatialField, j: Sequence[int]) -> complex:
    if max(abs(c) for c in j) > psi.radius:
        return 0j
    return complex(psi.coefficients[tuple(c + psi.radius for c in j)])


def _window_values(psi: SpatialField, window: Sequence[Tuple[int, ...]]) -> np.ndarray:
    return np.asarray([_coefficient(psi, j) for j in window], dtype=complex)


##########################################################################################


def split_initial_data(
    u0: SpatialField,
    modes: ModeSet,
    spec: ProblemSpec,
) -> Tuple[SpatialField, SpatialField]:
    """Splits u0 into its generic part u1 and the remainder u2 = u0 - u1.

    Raises
    ------
    AdmissibilityError
        If the analytic norm of u2 exceeds 10 |delta|.
    """
    generic = [modes.modes[k] for k in modes.generic_indices]
    u1 = spectral.zero_spatial(u0.radius, spectral.spatial_dimension(u0))
    for j in generic:
        if max(abs(c) for c in j) <= u0.radius:
            position = tuple(c + u0.radius for c in j)
            u1.coefficients[position] = u0.coefficients[position]
    u2 = SpatialField(coefficients=u0.coefficients - u1.coefficients, radius=u0.radius)
    size = spectral.analytic_norm(u2, spec.weight_beta)
    if size > ADMISSIBLE_CONSTANT * abs(spec.delta):
        raise AdmissibilityError(
            f"The non-generic part of the initial data has norm {size:.3e}, "
            f"above {ADMISSIBLE_CONSTANT} |delta|."
        )
    return u1, u2


def build_initial_data(
    modes: ModeSet,
    mode_data: ModeData,
    spec: ProblemSpec,
    tail_amplitude: float,
    radius: int,
    seed: int,
) -> SpatialField:
    """Initial data a_k e^{-i theta_k} on the generic modes plus a seeded O(delta) tail.

    The tail coefficient at j is tail_amplitude |delta| e^{-beta ||j||} times a complex
    Gaussian of unit variance; it covers every frequency of the ball ||j||_inf <= radius except
    the generic modes.
    """
    generator = np.random.default_rng(seed)
    u0 = spectral.zero_spatial(radius, modes.d)
    j = spectral.frequencies(radius, modes.d).astype(float)
    decay = np.exp(-spec.weight_beta * np.sqrt((j ** 2).sum(axis=-1)))
    shape = u0.coefficients.shape
    noise = (generator.standard_normal(shape) + 1j * generator.standard_normal(shape)) / np.sqrt(2)
    u0.coefficients[...] = tail_amplitude * abs(spec.delta) * decay * noise
    a = np.asarray(mode_data.a, dtype=float)
    theta = np.asarray(mode_data.theta, dtype=float)
    for k in modes.generic_indices:
        position = tuple(c + radius for c in modes.modes[k])
        u0.coefficients[position] = a[k] * np.exp(-1j * theta[k])
    return u0


def build_match_problem(
    u0: SpatialField,
    modes: ModeSet,
    spec: ProblemSpec,
    radius_factor: float = 2.0,
) -> MatchProblem:
    """Sets up F(alpha) = beta on the window ||j||_inf <= projection radius.

    Every window frequency becomes a mode of the matching ansatz; the generic ones keep the
    coefficients of u1 as seeds.

    Raises
    ------
    AdmissibilityError
    ProjectionOverflowError
        If the window holds more than 64 frequencies.
    """
    u1, u2 = split_initial_data(u0, modes, spec)
    radius = projection_radius(spec, modes, radius_factor)
    window = tuple(
        tuple(int(c) for c in j) for j in spectral.frequencies(radius, modes.d).reshape(-1, modes.d)
    )
    if len(window) > MAX_WINDOW_MODES:
        raise ProjectionOverflowError(
            f"The projection window of radius {radius} holds {len(window)} frequencies."
        )
    generic = {modes.modes[k] for k in modes.generic_indices}
    window_modes = ModeSet(
        modes=window,
        generic_indices=tuple(i for i, j in enumerate(window) if j in generic),
    )
    return MatchProblem(
        u1=u1,
        u2=u2,
        target_beta_vec=_window_values(u2, window),
        alpha_vec=np.zeros(len(window), dtype=complex),
        window=window,
        projection_radius=radius,
        modes=window_modes,
        seed_coefficients=_window_values(u1, window),
    )


def match_truncation(
    trunc: TruncationSpec,
    problem: MatchProblem,
    aux_order: Optional[int],
) -> TruncationSpec:
    """The truncation of the matching ansatz: the window fits and the small modes are capped."""
    return trunc._replace(J_x=max(trunc.J_x, problem.projection_radius), aux_order=aux_order)


def window_mode_data(problem: MatchProblem, alpha_vec: np.ndarray) -> ModeData:
    """Amplitudes and phases with a_j e^{-i theta_j} = seed_j + alpha_j on the window.

    Coefficients below the amplitude floor make inactive modes of zero amplitude.
    """
    coefficients = problem.seed_coefficients + np.asarray(alpha_vec, dtype=complex)
    a = np.abs(coefficients)
    inactive = a < AMPLITUDE_FLOOR
    theta = np.mod(-np.angle(coefficients), 2 * np.pi)
    return ModeData(a=np.where(inactive, 0.0, a), theta=np.where(inactive, 0.0, theta))


def _match_solution(
    alpha_vec: np.ndarray,
    problem: MatchProblem,
    spec: ProblemSpec,
    trunc: TruncationSpec,
) -> ApproximateSolution:
    return newton.run_scheme(
        spec,
        problem.modes,
        window_mode_data(problem, alpha_vec),
        trunc,
        early_exit=False,
        require_convergence=False,
        skip_zero_amplitudes=True,
    )


def initial_slice(solution: ApproximateSolution, radius: Optional[int] = None) -> SpatialField:
    """v(0), the solution at t = 0 with its stored phases."""
    return field.time_slice(
        solution.u_hat, solution.omega, solution.mode_data.theta, 0.0, radius
    )


def match_map(
    alpha_vec: np.ndarray,
    problem: MatchProblem,
    spec: ProblemSpec,
    trunc: TruncationSpec,
) -> np.ndarray:
    """F(alpha) = Pi v(0; alpha) - Pi u1 on the window.

    The scheme runs trunc.K sweeps without early exit, so that F is smooth in alpha. At
    delta = 0 the map is the identity.
    """
    solution = _match_solution(alpha_vec, problem, spec, trunc)
    image = _window_values(initial_slice(solution), problem.window)
    return image - problem.seed_coefficients


def _as_real(vector: np.ndarray) -> np.ndarray:
    return np.concatenate([vector.real, vector.imag])


def _as_complex(vector: np.ndarray) -> np.ndarray:
    half = vector.size // 2
    return vector[:half] + 1j * vector[half:]


def _jacobian_column(
    column: int,
    x: np.ndarray,
    base_image: np.ndarray,
    problem: MatchProblem,
    spec: ProblemSpec,
    trunc: TruncationSpec,
) -> np.ndarray:
    step = MATCH_STEP * max(1.0, abs(x[column]))
    shifted = x.copy()
    shifted[column] += step
    image = _as_real(match_map(_as_complex(shifted), problem, spec, trunc))
    return (image - base_image) / step


def match_jacobian(
    alpha_vec: np.ndarray,
    problem: MatchProblem,
    spec: ProblemSpec,
    trunc: TruncationSpec,
    threads: Optional[int] = None,
) -> np.ndarray:
    """Forward-difference Jacobian of F over the real coordinates (Re alpha, Im alpha)."""
    x = _as_real(np.asarray(alpha_vec, dtype=complex))
    base_image = _as_real(match_map(alpha_vec, problem, spec, trunc))
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
        columns = list(
            executor.map(
                _jacobian_column, range(x.size), repeat(x), repeat(base_image), repeat(problem),
                repeat(spec), repeat(trunc),
            )
        )
    return np.stack(columns, axis=1)


def solve_match(
    problem: MatchProblem,
    spec: ProblemSpec,
    trunc: TruncationSpec,
    tol: float = 1e-10,
    threads: Optional[int] = None,
) -> Tuple[np.ndarray, ApproximateSolution]:
    """Solves F(alpha) = beta by damped chord iterations with a cached Jacobian.

    The Jacobian is rebuilt when a step fails to halve the residual. Steps are halved until
    the residual decreases.

    Parameters
    ----------
    problem: MatchProblem
        The matching problem.
    spec: ProblemSpec
        The problem parameters; epsilon bounds the conditioning of F'.
    trunc: TruncationSpec
        The truncation of the matching ansatz.
    tol: float
        The target for ||F(alpha) - beta||.

    Returns
    -------
    Tuple[np.ndarray, ApproximateSolution]
        alpha and the matched solution v.

    Raises
    ------
    SingularOperatorError
        If ||F'^{-1}|| reaches 2 / epsilon.
    ConvergenceError
        If the target is not reached.
    """
    target = _as_real(problem.target_beta_vec)
    alpha = np.asarray(problem.alpha_vec, dtype=complex).copy()
    gap = _as_real(match_map(alpha, problem, spec, trunc)) - target
    jacobian = None
    fresh = False
    for iteration in range(MATCH_ITERATIONS):
        size = float(np.linalg.norm(gap))
        logger.info("Matching iteration %d: ||F(alpha) - beta|| = %.3e", iteration, size)
        if size <= tol:
            break
        if jacobian is None:
            jacobian = match_jacobian(alpha, problem, spec, trunc, threads)
            fresh = True
            sigma_min = float(np.linalg.svd(jacobian, compute_uv=False).min())
            if sigma_min <= spec.epsilon / 2:
                raise SingularOperatorError(
                    f"The matching map has ||F'^-1|| = {1 / max(sigma_min, 1e-300):.3e}.",
                    min_pivot=float("nan"),
                    sigma_min=sigma_min,
                )
        direction = _as_complex(np.linalg.solve(jacobian, -gap))
        damping = 1.0
        for _ in range(DAMPING_HALVINGS):
            candidate = alpha + damping * direction
            candidate_gap = _as_real(match_map(candidate, problem, spec, trunc)) - target
            if np.linalg.norm(candidate_gap) < size:
                break
            damping /= 2
        else:
            if fresh:
                break
            # Stale chord Jacobian.
            jacobian = None
            continue
        if np.linalg.norm(candidate_gap) > size / 2:
            jacobian = None
        fresh = False
        alpha, gap = candidate, candidate_gap
    size = float(np.linalg.norm(gap))
    if size > tol:
        raise ConvergenceError(
            f"Matching stopped at ||F(alpha) - beta|| = {size:.3e} above the tolerance {tol:.1e}."
        )
    return alpha, _match_solution(alpha, problem, spec, trunc)


##########################################################################################


def hamiltonian(spectrum: np.ndarray, spec: ProblemSpec) -> float:
    """H = sum |j|^2 |u_j|^2 + delta / (p + 1) ||u||_{2p+2}^{2p+2} on the normalised torus."""
    d = spectrum.ndim
    kinetic = float((spectral.laplacian_symbol(spectrum.shape[0], d) * np.abs(spectrum) ** 2).sum())
    values = spectral.spectrum_to_grid(spectrum)
    potential = spec.delta / (spec.p + 1) * float(np.mean(np.abs(values) ** (2 * spec.p + 2)))
    return kinetic + potential


def mass(spectrum: np.ndarray) -> float:
    """||u||_{L2}^2 on the normalised torus."""
    return float((np.abs(spectrum) ** 2).sum())


class SplitStepIntegrator:
    """Strang splitting for i u_t = -Laplace u + delta |u|^{2p} u on a periodic grid.

    The nonlinear substeps u <- u e^{-i delta |u|^{2p} tau / 2} are exact since they keep |u|
    fixed; the free substep multiplies the spectrum by e^{-i |k|^2 tau}.
    """

    def __init__(self, spec: ProblemSpec, grid_size: int, d: int) -> None:
        self.spec = spec
        self.grid_size = grid_size
        self.d = d
        self.symbol = spectral.laplacian_symbol(grid_size, d)

    def _nonlinear(self, values: np.ndarray, tau: float) -> np.ndarray:
        return values * np.exp(-1j * self.spec.delta * np.abs(values) ** (2 * self.spec.p) * tau)

    def run(
        self,
        spectrum: np.ndarray,
        T: float,
        dt: float,
        samples: int,
    ) -> Tuple[np.ndarray, List[np.ndarray]]:
        steps = max(1, int(np.ceil(abs(T) / dt - 1e-9)))
        tau = T / steps
        kinetic = np.exp(-1j * self.symbol * tau)
        recorded = np.unique(np.rint(np.linspace(0, steps, max(samples, 2))).astype(int))
        wanted = set(recorded.tolist())
        initial = float(spectral.spectral_l2_norm(spectrum, self.d))
        states = [spectrum] if 0 in wanted else []
        values = spectral.spectrum_to_grid(spectrum)
        for step in range(steps):
            values = self._nonlinear(values, tau / 2)
            spectrum = spectral.grid_to_spectrum(values, self.d) * kinetic
            values = self._nonlinear(spectral.spectrum_to_grid(spectrum), tau / 2)
            if step + 1 in wanted:
                spectrum = spectral.grid_to_spectrum(values, self.d)
                size = float(spectral.spectral_l2_norm(spectrum, self.d))
                if initial > 0 and size > BLOW_UP_FACTOR * initial:
                    raise BlowUpError(
                        f"The norm grew from {initial:.3e} to {size:.3e} "
                        f"by t = {(step + 1) * tau:.3g}."
                    )
                states.append(spectrum)
        return recorded * tau, states


def default_oracle_step(max_frequency: float) -> float:
    """min(1e-3, 0.1 / max |omega|)."""
    return min(1e-3, 0.1 / max(1.0, float(max_frequency)))


def box_frequency(radius: int, d: int) -> float:
    """The largest |j|^2 on the box of the given radius."""
    return float(d * radius ** 2)


def oracle_integrate(
    u0: SpatialField,
    spec: ProblemSpec,
    T: float,
    dt: Optional[float] = None,
    grid_size: Optional[int] = None,
    samples: int = 11,
    halving_tolerance: Optional[float] = None,
) -> OracleTrajectory:
    """Integrates the full equation from u0 by Strang splitting.

    Parameters
    ----------
    u0: SpatialField
        The initial datum.
    spec: ProblemSpec
        The problem parameters.
    T: float
        The final time.
    dt: Optional[float]
        The time step; min(1e-3, 0.1 / (d R^2)) for data of radius R by default.
    grid_size: Optional[int]
        The spatial grid, at least 4 R points.
    samples: int
        The number of equally spaced sample times.
    halving_tolerance: Optional[float]
        When given, dt is halved until two consecutive trajectories agree to this tolerance.

    Returns
    -------
    OracleTrajectory
        FFT-ordered spectra at the sample times with their mass and Hamiltonian.

    Raises
    ------
    DimensionMismatchError
        If the grid is too coarse.
    BlowUpError
        If the norm grows tenfold.
    IntegratorDisagreementError
        If step halving does not settle.
    """
    d = spectral.spatial_dimension(u0)
    grid_size = grid_size or spectral.default_grid_size(u0.radius, spec.p)
    if grid_size < 4 * u0.radius:
        raise DimensionMismatchError(
            f"The oracle grid of {grid_size} points is below 4 times the radius {u0.radius}."
        )
    dt = dt or default_oracle_step(box_frequency(u0.radius, d))
    integrator = SplitStepIntegrator(spec, grid_size, d)
    initial = spectral.to_spectrum(u0, grid_size)
    times, states = integrator.run(initial, T, dt, samples)
    if halving_tolerance is not None:
        for _ in range(MAX_HALVINGS):
            _, finer = integrator.run(initial, T, dt / 2, samples)
            gap = float(np.max(spectral.spectral_l2_norm(np.stack(states) - np.stack(finer), d)))
            dt, states = dt / 2, finer
            if gap <= halving_tolerance:
                break
        else:
            raise IntegratorDisagreementError(
                f"The oracle still changes by {gap:.3e} after {MAX_HALVINGS} step halvings."
            )
    return OracleTrajectory(
        times=times,
        states=np.stack(states),
        mass=np.asarray([mass(state) for state in states]),
        hamiltonian=np.asarray([hamiltonian(state, spec) for state in states]),
        dt=float(dt),
        radius=u0.radius,
    )


##########################################################################################


class _RemainderDynamics:
    """Grid terms of i w_t = -Laplace w + V w + W conj(w) + f(w) - xi around v.

    xi = i v_t + Laplace v - delta |v|^{2p} v is the residual of v and
    f(w) = delta (|v + w|^{2p} (v + w) - |v|^{2p} v) - V w - W conj(w) is quadratic in w.
    """

    def __init__(self, solution: ApproximateSolution, spec: ProblemSpec, grid_size: int) -> None:
        self.spec = spec
        self.d = field.spatial_dim(solution.u_hat)
        self.sampler = spectral.QuasiPeriodicSampler(
            solution.u_hat, solution.omega, solution.mode_data.theta, grid_size
        )
        self.symbol = spectral.laplacian_symbol(grid_size, self.d)

    def _power(self, values: np.ndarray) -> np.ndarray:
        return np.abs(values) ** (2 * self.spec.p) * values

    def forcing(self, w: np.ndarray, t: float) -> np.ndarray:
        """The spectrum of f(w) - xi at time t."""
        v_spectrum = self.sampler.spectrum(t)
        v = spectral.spectrum_to_grid(v_spectrum)
        w_values = spectral.spectrum_to_grid(w)
        V, W = linflow.potentials(v, self.spec.delta, self.spec.p)
        delta = self.spec.delta
        quadratic = (
            delta * (self._power(v + w_values) - self._power(v))
            - V * w_values
            - W * np.conj(w_values)
        )
        residual = (
            1j * self.sampler.time_derivative_spectrum(t)
            - self.symbol * v_spectrum
            - spectral.grid_to_spectrum(delta * self._power(v), self.d)
        )
        return spectral.grid_to_spectrum(quadratic, self.d) - residual


def _duhamel_remainder(
    w0: np.ndarray,
    solution: ApproximateSolution,
    spec: ProblemSpec,
    T: float,
    dt: float,
    times: np.ndarray,
    grid_size: int,
) -> List[np.ndarray]:
    """Trapezoidal Duhamel steps w_k = S(t_k, t_k-1)[w_k-1 - i h/2 g_k-1] - i h/2 g_k, g = f - xi.

    Each step is closed by Picard iteration on w_k.
    """
    propagator = linflow.LinearizedPropagator(solution, spec, grid_size)
    dynamics = _RemainderDynamics(solution, spec, grid_size)
    d = dynamics.d
    steps = max(1, int(np.ceil(abs(T) / DUHAMEL_STEP - 1e-9)))
    h = T / steps
    wanted = {int(i) for i in np.rint(times / h).astype(int)} if h else {0}
    w = w0
    states = [w0] if 0 in wanted else []
    forcing = dynamics.forcing(w, 0.0)
    for step in range(steps):
        start = step * h
        _, evolved = propagator.run(w - 0.5j * h * forcing, h, dt, start=start)
        carried = evolved[-1]
        new = carried
        for _ in range(PICARD_ITERATIONS):
            new_forcing = dynamics.forcing(new, start + h)
            updated = carried - 0.5j * h * new_forcing
            change = float(spectral.spectral_l2_norm(updated - new, d))
            new = updated
            if change <= PICARD_TOLERANCE * max(1.0, float(spectral.spectral_l2_norm(new, d))):
                break
        w, forcing = new, dynamics.forcing(new, start + h)
        if step + 1 in wanted:
            states.append(w)
    return states


def remainder_evolution(
    w0: SpatialField,
    solution: ApproximateSolution,
    spec: ProblemSpec,
    T: float,
    dt: Optional[float] = None,
    samples: int = 11,
    grid_size: Optional[int] = None,
    envelope_constant: float = ENVELOPE_CONSTANT,
    agreement_tolerance: float = AGREEMENT_TOLERANCE,
    halving_tolerance: Optional[float] = HALVING_TOLERANCE,
) -> RemainderReport:
    """Evolves the remainder w = u - v directly and through the Duhamel formula around v.

    The direct remainder is the split-step solution from v(0) + w0 minus v(t). The Duhamel
    remainder steps w(t) = S(t) w0 - i int S(t, s) (f(w) - xi)(s) ds with the linearized
    propagator. The bound constant is max_t ||w(t)|| / (|delta|^{r/2} (1 + t)).

    Raises
    ------
    IntegratorDisagreementError
        If the two remainders differ by more than agreement_tolerance at a sample time, or
        if the step halving of the direct integration does not settle.
    """
    d = spectral.spatial_dimension(w0)
    radius = max(w0.radius, solution.trunc.J_x)
    grid_size = grid_size or spectral.default_grid_size(radius, spec.p)
    frequency = max(box_frequency(radius, d), float(np.max(np.abs(solution.omega), initial=0.0)))
    dt = dt or default_oracle_step(frequency)
    v0 = spectral.resize(initial_slice(solution, radius), radius)
    u0 = SpatialField(
        coefficients=v0.coefficients + spectral.resize(w0, radius).coefficients, radius=radius
    )
    oracle = oracle_integrate(u0, spec, T, dt, grid_size, samples, halving_tolerance)
    sampler = spectral.QuasiPeriodicSampler(
        solution.u_hat, solution.omega, solution.mode_data.theta, grid_size
    )
    direct = [state - sampler.spectrum(t) for t, state in zip(oracle.times, oracle.states)]
    duhamel = _duhamel_remainder(
        spectral.to_spectrum(w0, grid_size), solution, spec, T, oracle.dt, oracle.times, grid_size
    )
    direct_norms = spectral.spectral_l2_norm(np.stack(direct), d)
    duhamel_norms = spectral.spectral_l2_norm(np.stack(duhamel), d)
    agreement = float(np.max(spectral.spectral_l2_norm(np.stack(direct) - np.stack(duhamel), d)))
    if agreement > agreement_tolerance:
        raise IntegratorDisagreementError(
            f"The direct and Duhamel remainders differ by {agreement:.3e}, "
            f"above {agreement_tolerance:.1e}."
        )
    times = np.abs(oracle.times)
    if spec.delta != 0:
        constant = float((direct_norms / (abs(spec.delta) ** (spec.r / 2) * (1 + times))).max())
        bound_ok = constant <= envelope_constant
    else:
        constant = float(direct_norms.max())
        bound_ok = constant <= (1 + 1e-8) * float(direct_norms[0]) + 1e-14
    logger.info("Remainder: bound constant %.3e, direct/Duhamel gap %.3e", constant, agreement)
    return RemainderReport(
        times=oracle.times,
        direct_norms=direct_norms,
        duhamel_norms=duhamel_norms,
        agreement=agreement,
        bound_constant=constant,
        bound_ok=bool(bound_ok),
    )


##########################################################################################


def validate_cauchy(
    u0: SpatialField,
    spec: ProblemSpec,
    modes: ModeSet,
    trunc: TruncationSpec,
    settings: CauchySettings,
    dt: Optional[float] = None,
    threads: Optional[int] = None,
    check_remainder: bool = True,
    mode_data: Optional[ModeData] = None,
) -> CauchyResult:
    """Runs the whole matching pipeline and compares v(t) with the direct integration of u0.

    Parameters
    ----------
    u0: SpatialField
        The initial data; its generic part lives on the generic modes of modes.
    spec: ProblemSpec
        The problem parameters.
    modes: ModeSet
        The mode set whose generic modes define u1.
    trunc: TruncationSpec
        The truncation of the matching ansatz (J_x is widened to the window).
    settings: CauchySettings
        The projection factor, horizon, sample count, envelope constant, match tolerance,
        cap on small-mode excitations and oracle halving tolerance.
    mode_data: Optional[ModeData]
        The amplitudes of the modes; when given, they must survive the excision at
        spec.epsilon before any matching starts.

    Returns
    -------
    CauchyResult
        Passed iff every sampled ||u(t) - v(t)||_{L2} stays below C delta^{r/2} (1 + t) and the
        remainder bound holds.

    Raises
    ------
    ExcisionError
        If mode_data is given and falls in the excised set.
    IntegratorDisagreementError
        If the oracle step halving does not settle or the two remainders disagree.
    """
    if mode_data is not None:
        with stage("excise"):
            resonance.require_excision(mode_data, spec, modes, trunc)
    with stage("split"):
        problem = build_match_problem(u0, modes, spec, settings.radius_factor)
    match_trunc = match_truncation(trunc, problem, settings.aux_order)
    with stage("match"):
        alpha, solution = solve_match(problem, spec, match_trunc, settings.match_tolerance, threads)
    radius = max(u0.radius, solution.trunc.J_x)
    d = spectral.spatial_dimension(u0)
    grid_size = spectral.default_grid_size(radius, spec.p)
    v0 = initial_slice(solution, radius)
    u0_wide = spectral.resize(u0, radius)
    difference = SpatialField(coefficients=v0.coefficients - u0_wide.coefficients, radius=radius)
    init_error = spectral.l2_norm(difference)
    init_error_analytic = spectral.analytic_norm(difference, spec.weight_beta_prime)
    horizon = settings.horizon if settings.horizon is not None else default_horizon(spec)
    with stage("oracle"):
        oracle = oracle_integrate(
            u0_wide, spec, horizon, dt, grid_size, settings.samples, settings.halving_tolerance
        )
    sampler = spectral.QuasiPeriodicSampler(
        solution.u_hat, solution.omega, solution.mode_data.theta, grid_size
    )
    gaps = np.stack([state - sampler.spectrum(t) for t, state in zip(oracle.times, oracle.states)])
    errors = spectral.spectral_l2_norm(gaps, d)
    errors_analytic = spectral.spectral_analytic_norm(gaps, d, spec.weight_beta_prime)
    scale = abs(spec.delta) ** (spec.r / 2)
    envelope = settings.envelope_constant * scale * (1 + np.abs(oracle.times))
    remainder = None
    remainder_ok = True
    if check_remainder:
        window = horizon if spec.delta == 0 else min(horizon, abs(spec.delta) ** (-spec.r / 10))
        with stage("remainder"):
            remainder = remainder_evolution(
                SpatialField(coefficients=-difference.coefficients, radius=radius),
                solution,
                spec,
                window,
                dt,
                settings.samples,
                grid_size,
                settings.envelope_constant,
                halving_tolerance=settings.halving_tolerance,
            )
        remainder_ok = remainder.bound_ok
    # Integrator error floor for delta = 0, where the envelope vanishes.
    passed = bool(np.all(errors <= envelope + 1e-9) and remainder_ok)
    logger.info(
        "Cauchy validation: init error %.3e, max trajectory error %.3e, passed %s",
        init_error, float(errors.max()), passed,
    )
    return CauchyResult(
        matched_solution=solution,
        alpha_vec=alpha,
        init_error=init_error,
        init_error_analytic=init_error_analytic,
        times=oracle.times,
        trajectory_errors=errors,
        trajectory_errors_analytic=errors_analytic,
        envelope=envelope,
        mass=oracle.mass,
        hamiltonian=oracle.hamiltonian,
        remainder=remainder,
        remainder_bound_ok=bool(remainder_ok),
        passed=passed,
    )
