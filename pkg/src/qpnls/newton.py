"""Implements the finitely iterated Newton scheme for the lattice equations.

Every sweep solves the P-equations off the resonant set S with the band-truncated operator
T_N and then updates the B frequencies from the Q-equations on S,

    omega_j = j^2 + (delta / a_j) [(u * v)^{*p} * u](-e_j, j),

keeping u_hat(-e_j, j) = a_j fixed throughout.
"""
import itertools
import json
import logging
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from qpnls import field, lattice, linop, nonlinear
from qpnls.data_structures import (
    ApproximateSolution,
    DerivativeResidualReport,
    FourierField,
    FrequencyVector,
    IterationRecord,
    ModeData,
    ModeSet,
    ProblemSpec,
    ResidualReport,
    TruncationSpec,
)
from qpnls.helpers import (
    ConvergenceError,
    DivergenceError,
    StepSizeError,
    ZeroAmplitudeError,
)


logger = logging.getLogger(__name__)


DIVERGENCE_FACTOR = 2.0
CLOSENESS_CONSTANT = 10.0
RICHARDSON_TOLERANCE = 0.1
RICHARDSON_FLOOR = 1e-13
SHIFT_SPREAD_TOLERANCE = 1e-12
STEP_RANGE = (1e-6, 1e-3)


def default_sweeps(spec: ProblemSpec) -> int:
    """K = r + 2, rounded up."""
    return int(np.ceil(spec.r)) + 2


def initial_frequencies(modes: ModeSet) -> FrequencyVector:
    """omega_j = |j|^2 for every mode."""
    return (lattice.mode_matrix(modes) ** 2).sum(axis=1).astype(float)


def residual(
    u: FourierField,
    v: FourierField,
    omega: FrequencyVector,
    spec: ProblemSpec,
    trunc: Optional[TruncationSpec] = None,
    generic: Sequence[int] = (),
    method: str = "auto",
) -> ResidualReport:
    """The residual xi = i u_t + Laplace u - delta |u|^{2p} u in coefficients, xi_hat = -F_u.

    Parameters
    ----------
    u: FourierField
        The coefficients u_hat.
    v: FourierField
        The coefficients v_hat.
    omega: FrequencyVector
        The frequencies.
    spec: ProblemSpec
        The problem parameters.
    trunc: Optional[TruncationSpec]
        The truncation of the residual; defaults to that of u.

    Returns
    -------
    ResidualReport
        The residual field with its spatial analytic norms at beta and beta' and its
        space-time norm.
    """
    F_u, _ = nonlinear.evaluate_F(u, v, omega, spec, trunc, method, generic)
    xi_hat = field.scale(F_u, -1.0)
    return ResidualReport(
        xi_hat=xi_hat,
        norm_beta=field.analytic_norm(xi_hat, spec.weight_beta),
        norm_beta_prime=field.analytic_norm(xi_hat, spec.weight_beta_prime),
        norm_space_time=field.space_time_norm(xi_hat, spec),
    )


def off_resonant(f: FourierField, modes: ModeSet) -> FourierField:
    """Drops the u-block resonant sites (-e_k, j_k) from f."""
    if f.values.size == 0:
        return f
    u_resonant, _ = lattice.resonant_coords(modes)
    return field.restrict(f, lattice.find_rows(u_resonant, f.coords) < 0)


def _record(k: int, report: ResidualReport, omega: np.ndarray) -> IterationRecord:
    record = IterationRecord(
        k=k,
        residual_beta=report.norm_beta,
        residual_beta_prime=report.norm_beta_prime,
        omega=tuple(float(w) for w in omega),
    )
    logger.info(json.dumps(record._asdict()))
    return record


def _solution(
    u: FourierField,
    v: FourierField,
    omega: np.ndarray,
    report: ResidualReport,
    iterations: int,
    history: Tuple[IterationRecord, ...],
    modes: ModeSet,
    mode_data: ModeData,
    trunc: TruncationSpec,
) -> ApproximateSolution:
    return ApproximateSolution(
        u_hat=u,
        v_hat=v,
        omega=np.asarray(omega, dtype=float),
        mode_data=mode_data,
        xi_hat=report.xi_hat,
        residual_norm=report.norm_beta_prime,
        iterations=iterations,
        history=history,
        modes=modes,
        trunc=trunc,
    )


def active_directions(mode_data: ModeData) -> Optional[Callable[[np.ndarray], np.ndarray]]:
    """A site filter dropping every n with n_k != 0 along a zero-amplitude mode.

    No coefficient is ever generated along such a direction, and T_N does not couple it to the
    rest, so the filter leaves every solve unchanged.
    """
    inactive = np.flatnonzero(np.asarray(mode_data.a, dtype=float) == 0)
    if inactive.size == 0:
        return None
    return lambda coords: np.all(coords[:, inactive] == 0, axis=1)


def newton_step(
    current: ApproximateSolution,
    spec: ProblemSpec,
    trunc: Optional[TruncationSpec] = None,
    sublattice: bool = True,
    method: str = "auto",
) -> ApproximateSolution:
    """One P-step: u <- u - T_N^{-1} F(u)|_{off S}, then v <- conjugate_field(u).

    The frequencies are left untouched; the resonant entries of u are not changed. The
    returned solution carries the residual at the new coefficients and the old frequencies.

    Raises
    ------
    SingularOperatorError
        If T_N is singular at the excision threshold epsilon |delta|.
    """
    trunc = trunc or current.trunc
    modes = current.modes
    F_u, F_v = nonlinear.evaluate_F(
        current.u_hat, current.v_hat, current.omega, spec, trunc, method, modes.generic_indices
    )
    op = linop.assemble_T_N(
        current.u_hat,
        current.v_hat,
        current.omega,
        spec,
        trunc,
        modes,
        sublattice,
        method,
        active_directions(current.mode_data),
    )
    report = linop.solve(op, F_u, F_v, threshold=spec.epsilon * abs(spec.delta))
    u = field.add(current.u_hat, report.u, -1.0)
    u = u._replace(trunc=trunc)
    v = field.conjugate_field(u)
    logger.debug(
        "P-step: ||T_N^-1|| witness %.3e, condition %.3e",
        report.norm_ratio,
        report.condition_estimate,
    )
    new_report = residual(u, v, current.omega, spec, trunc, modes.generic_indices, method)
    return current._replace(
        u_hat=u,
        v_hat=v,
        xi_hat=new_report.xi_hat,
        residual_norm=new_report.norm_beta_prime,
        iterations=current.iterations + 1,
        trunc=trunc,
    )


def q_update(
    current: ApproximateSolution,
    spec: ProblemSpec,
    skip_zero_amplitudes: bool = False,
    method: str = "auto",
) -> FrequencyVector:
    """Solves the Q-equations for the frequencies at the current coefficients.

    Parameters
    ----------
    current: ApproximateSolution
        The solution whose u_hat and v_hat are used.
    spec: ProblemSpec
        The problem parameters.
    skip_zero_amplitudes: bool
        Whether modes with a_j = 0 keep their current frequency instead of raising.

    Returns
    -------
    FrequencyVector
        omega_j = j^2 + (delta / a_j) [(u * v)^{*p} * u](-e_j, j).

    Raises
    ------
    ZeroAmplitudeError
        If some a_j vanishes and skip_zero_amplitudes is not set.
    """
    modes = current.modes
    a = np.asarray(current.mode_data.a, dtype=float)
    base = initial_frequencies(modes)
    zero = a == 0
    if zero.any() and not skip_zero_amplitudes:
        raise ZeroAmplitudeError(
            f"The frequency update divides by the zero amplitude of modes "
            f"{np.flatnonzero(zero).tolist()}."
        )
    if spec.delta == 0:
        return np.where(zero, current.omega, base)
    u_resonant, _ = lattice.resonant_coords(modes)
    term = nonlinear.nonlinear_term(current.u_hat, current.v_hat, spec.p, method=method)
    values = nonlinear.site_value(term, u_resonant)
    if np.any(np.abs(values.imag) > 1e-12 * np.maximum(np.abs(values.real), 1.0)):
        logger.warning("The frequency update has a non-real part %.3e", np.abs(values.imag).max())
    shift = np.divide(values.real, a, out=np.zeros_like(a), where=~zero)
    return np.where(zero, current.omega, base + spec.delta * shift)


def frequency_shifts(solution: ApproximateSolution, spec: ProblemSpec) -> Tuple[np.ndarray, float]:
    """Per-mode shifts Omega_j = (omega_j - j^2) / delta and their mean."""
    if spec.delta == 0:
        return np.zeros(solution.modes.B), 0.0
    shifts = (solution.omega - initial_frequencies(solution.modes)) / spec.delta
    return shifts, float(shifts.mean())


def run_scheme(
    spec: ProblemSpec,
    modes: ModeSet,
    mode_data: ModeData,
    trunc: TruncationSpec,
    frozen_omega: Optional[FrequencyVector] = None,
    early_exit: bool = True,
    require_convergence: bool = True,
    skip_zero_amplitudes: bool = False,
    sublattice: bool = True,
    method: str = "auto",
) -> ApproximateSolution:
    """Runs the Newton scheme from the ansatz u_hat(-e_j, j) = a_j, omega = {j^2}.

    Parameters
    ----------
    spec: ProblemSpec
        The problem parameters.
    modes: ModeSet
        The modes.
    mode_data: ModeData
        The amplitudes pinned on S and the phases recorded with the solution.
    trunc: TruncationSpec
        The truncation; trunc.K sweeps at most.
    frozen_omega: Optional[FrequencyVector]
        When given, the frequencies are held at this value and only the P-equations are
        solved, so that a and omega act as independent variables.
    early_exit: bool
        Whether to stop once the beta' residual drops below |delta|^r.
    require_convergence: bool
        Whether missing the residual target after K sweeps raises.
    skip_zero_amplitudes: bool
        Whether zero-amplitude modes keep omega_j = j^2.

    Returns
    -------
    ApproximateSolution
        The solution after the executed sweeps.

    Raises
    ------
    SingularOperatorError
        If T_N has to be excised at some sweep.
    DivergenceError
        If a sweep more than doubles the residual.
    ConvergenceError
        If the target is missed and require_convergence is set.
    """
    u = field.ansatz(modes, mode_data, trunc)
    v = field.conjugate_field(u)
    omega = (
        np.asarray(frozen_omega, dtype=float).copy()
        if frozen_omega is not None
        else initial_frequencies(modes)
    )
    target = abs(spec.delta) ** spec.r
    report = residual(u, v, omega, spec, trunc, modes.generic_indices, method)
    history = [_record(0, report, omega)]
    current = _solution(u, v, omega, report, 0, tuple(history), modes, mode_data, trunc)
    previous = report.norm_beta_prime
    for k in range(1, trunc.K + 1):
        if early_exit and current.residual_norm <= target:
            break
        current = newton_step(current, spec, trunc, sublattice, method)
        if frozen_omega is None:
            omega = q_update(current, spec, skip_zero_amplitudes, method)
        report = residual(
            current.u_hat, current.v_hat, omega, spec, trunc, modes.generic_indices, method
        )
        history.append(_record(k, report, omega))
        current = _solution(
            current.u_hat, current.v_hat, omega, report, k, tuple(history), modes, mode_data, trunc
        )
        if previous > 0 and report.norm_beta_prime > DIVERGENCE_FACTOR * previous:
            raise DivergenceError(
                f"Sweep {k} raised the residual from {previous:.3e} "
                f"to {report.norm_beta_prime:.3e}."
            )
        if report.norm_beta_prime > previous:
            logger.warning("Sweep %d increased the residual to %.3e", k, report.norm_beta_prime)
        previous = report.norm_beta_prime
    if require_convergence and current.residual_norm > target:
        raise ConvergenceError(
            f"The residual {current.residual_norm:.3e} missed the target {target:.3e} "
            f"after {current.iterations} sweeps."
        )
    distance = field.analytic_norm(field.add(current.u_hat, u, -1.0), spec.weight_beta)
    if spec.delta != 0 and distance > CLOSENESS_CONSTANT * abs(spec.delta):
        logger.warning("The solution moved %.3e away from the ansatz", distance)
    if frozen_omega is None and spec.delta != 0:
        shifts, mean = frequency_shifts(current, spec)
        if np.ptp(shifts) > SHIFT_SPREAD_TOLERANCE:
            logger.warning(
                "Frequency shifts differ across modes: Omega = %s, common part %.6g",
                np.array2string(shifts, precision=6),
                mean,
            )
    return current


def first_order_shift(modes: ModeSet, a: Sequence[float], p: int) -> np.ndarray:
    """The exact first-order shifts Omega_j = a_j^{-1} [(u_1 * v_1)^{*p} * u_1](-e_j, j).

    The product is expanded term by term over ordered tuples of p + 1 u-factors and p v-factors
    of the ansatz, without any convolution machinery.
    """
    a = np.asarray(a, dtype=float)
    matrix = lattice.mode_matrix(modes)
    B = modes.B
    shifts = np.zeros(B)
    for target in range(B):
        if a[target] == 0:
            continue
        total = 0.0
        for u_factors in itertools.product(range(B), repeat=p + 1):
            for v_factors in itertools.product(range(B), repeat=p):
                n = np.zeros(B, dtype=np.int64)
                np.subtract.at(n, list(u_factors), 1)
                np.add.at(n, list(v_factors), 1)
                j = matrix[list(u_factors)].sum(axis=0) - matrix[list(v_factors)].sum(axis=0)
                expected_n = -np.eye(B, dtype=np.int64)[target]
                if np.array_equal(n, expected_n) and np.array_equal(j, matrix[target]):
                    total += np.prod(a[list(u_factors)]) * np.prod(a[list(v_factors)])
        shifts[target] = total / a[target]
    return shifts


def shift_phases(solution: ApproximateSolution, t: float) -> ApproximateSolution:
    """The same solution with phases theta + omega t, i.e. observed from time t."""
    theta = np.asarray(solution.mode_data.theta, dtype=float) + solution.omega * t
    theta = np.mod(theta, 2 * np.pi)
    return solution._replace(mode_data=solution.mode_data._replace(theta=theta))


##########################################################################################


def _p_residual(
    spec: ProblemSpec,
    modes: ModeSet,
    a: np.ndarray,
    omega: np.ndarray,
    trunc: TruncationSpec,
    sweeps: int,
    method: str,
) -> FourierField:
    mode_data = ModeData(a=a, theta=np.zeros(modes.B))
    solution = run_scheme(
        spec,
        modes,
        mode_data,
        trunc._replace(K=sweeps),
        frozen_omega=omega,
        early_exit=False,
        require_convergence=False,
        skip_zero_amplitudes=True,
        method=method,
    )
    return off_resonant(solution.xi_hat, modes)


def _richardson(
    evaluate,
    h: float,
    beta: float,
    label: str,
    floor: float,
) -> FourierField:
    wide = evaluate(h)
    narrow = evaluate(h / 2)
    extrapolated = field.add(field.scale(narrow, 4.0 / 3.0), wide, -1.0 / 3.0)
    gap = field.analytic_norm(field.add(wide, narrow, -1.0), beta)
    scale = field.analytic_norm(extrapolated, beta)
    if gap > max(RICHARDSON_TOLERANCE * scale, floor, RICHARDSON_FLOOR):
        raise StepSizeError(
            f"The {label} derivative changes by {gap:.3e} under step halving from h = {h}."
        )
    return extrapolated


def derivative_residuals(
    solution: ApproximateSolution,
    spec: ProblemSpec,
    h: float = 1e-4,
    tilde_j: Optional[Sequence[int]] = None,
    method: str = "auto",
) -> DerivativeResidualReport:
    """Finite-difference derivatives of the P-residual with a and omega independent.

    The residual off S is recomputed with the frequencies frozen for a fixed number of sweeps,
    so that it is a smooth function of (a, omega). Central differences with steps h and h/2 are
    combined by Richardson extrapolation. The theta-derivative along an auxiliary mode is
    measured at small auxiliary amplitudes and extrapolated to amplitude 0.

    Parameters
    ----------
    solution: ApproximateSolution
        The converged solution.
    spec: ProblemSpec
        The problem parameters.
    h: float
        The finite-difference step, in [1e-6, 1e-3].
    tilde_j: Optional[Sequence[int]]
        The auxiliary frequency; defaults to modes.tilde_j, then to (R + 1, 0, ..., 0) with R
        the largest mode radius.

    Raises
    ------
    StepSizeError
        If h is out of range or the two step sizes disagree.
    """
    if not STEP_RANGE[0] <= h <= STEP_RANGE[1]:
        raise StepSizeError(f"The step {h} lies outside [{STEP_RANGE[0]}, {STEP_RANGE[1]}].")
    modes, trunc = solution.modes, solution.trunc
    sweeps = solution.iterations or 1
    a = np.asarray(solution.mode_data.a, dtype=float)
    omega = np.asarray(solution.omega, dtype=float)
    beta = spec.weight_beta_prime
    bound_a = abs(spec.delta) ** spec.r
    bound_omega = abs(spec.delta) ** (spec.r - 1)

    def a_derivative(k: int):
        def evaluate(step: float) -> FourierField:
            shift = step * np.eye(modes.B)[k]
            plus = _p_residual(spec, modes, a + shift, omega, trunc, sweeps, method)
            minus = _p_residual(spec, modes, a - shift, omega, trunc, sweeps, method)
            return field.scale(field.add(plus, minus, -1.0), 1.0 / (2 * step))
        return evaluate

    def omega_derivative(k: int):
        def evaluate(step: float) -> FourierField:
            shift = step * np.eye(modes.B)[k]
            plus = _p_residual(spec, modes, a, omega + shift, trunc, sweeps, method)
            minus = _p_residual(spec, modes, a, omega - shift, trunc, sweeps, method)
            return field.scale(field.add(plus, minus, -1.0), 1.0 / (2 * step))
        return evaluate

    da_norms = tuple(
        field.analytic_norm(_richardson(a_derivative(k), h, beta, f"a_{k}", 0.01 * bound_a), beta)
        for k in range(modes.B)
    )
    domega_norms = tuple(
        field.analytic_norm(
            _richardson(omega_derivative(k), h, beta, f"omega_{k}", 0.01 * bound_omega), beta
        )
        for k in range(modes.B)
    )
    dtheta = auxiliary_theta_derivative(solution, spec, tilde_j, h, method)
    passed = (
        max(da_norms) <= bound_a
        and max(domega_norms) <= bound_omega
        and dtheta <= 1e-12
    )
    logger.info(
        "Derivative residuals: max d/da %.3e (bound %.3e), max d/domega %.3e (bound %.3e)",
        max(da_norms), bound_a, max(domega_norms), bound_omega,
    )
    return DerivativeResidualReport(
        da_norms=da_norms,
        domega_norms=domega_norms,
        dtheta_auxiliary=dtheta,
        bound_a=bound_a,
        bound_omega=bound_omega,
        passed=bool(passed),
    )


def default_auxiliary_frequency(modes: ModeSet) -> Tuple[int, ...]:
    if modes.tilde_j is not None:
        return tuple(modes.tilde_j)
    return (lattice.mode_radius(modes) + 1,) + (0,) * (modes.d - 1)


def auxiliary_theta_profile(
    solution: ApproximateSolution,
    spec: ProblemSpec,
    amplitude: float,
    tilde_j: Optional[Sequence[int]] = None,
    method: str = "auto",
) -> FourierField:
    """d xi / d theta_tilde with the auxiliary frequency appended at the given amplitude.

    The scheme is rerun for as many sweeps as the solution took; theta_tilde only enters
    through the phase e^{i n_tilde theta_tilde}, so the derivative multiplies every residual
    coefficient by i n_tilde.
    """
    modes = solution.modes
    extended = lattice.append_auxiliary_mode(modes, tilde_j or default_auxiliary_frequency(modes))
    trunc = solution.trunc
    J_x = max(trunc.J_x, lattice.mode_radius(extended))
    mode_data = ModeData(
        a=np.append(np.asarray(solution.mode_data.a, dtype=float), amplitude),
        theta=np.append(np.asarray(solution.mode_data.theta, dtype=float), 0.0),
    )
    auxiliary = run_scheme(
        spec,
        extended,
        mode_data,
        trunc._replace(J_x=J_x, K=solution.iterations or 1),
        early_exit=False,
        require_convergence=False,
        skip_zero_amplitudes=True,
        method=method,
    )
    xi = auxiliary.xi_hat
    return xi._replace(values=1j * xi.coords[:, extended.B - 1] * xi.values)


def auxiliary_theta_derivative(
    solution: ApproximateSolution,
    spec: ProblemSpec,
    tilde_j: Optional[Sequence[int]] = None,
    h: float = 1e-4,
    method: str = "auto",
) -> float:
    """The beta' norm of d xi / d theta_tilde as the auxiliary amplitude tends to 0.

    The profile is measured at amplitudes h, h/2 and h/4 and extrapolated to 0 by the
    quadratic rule (8 f(h/4) - 6 f(h/2) + f(h)) / 3, which cancels the terms linear and
    quadratic in the amplitude.
    """
    profiles = [
        auxiliary_theta_profile(solution, spec, h / scale, tilde_j, method)
        for scale in (1, 2, 4)
    ]
    extrapolated = field.add(
        field.add(field.scale(profiles[2], 8.0 / 3.0), profiles[1], -2.0), profiles[0], 1.0 / 3.0
    )
    value = field.analytic_norm(extrapolated, spec.weight_beta_prime)
    logger.debug(
        "d xi / d theta_tilde: %.3e at amplitude %.1e, %.3e extrapolated",
        field.analytic_norm(profiles[0], spec.weight_beta_prime), h, value,
    )
    return value
