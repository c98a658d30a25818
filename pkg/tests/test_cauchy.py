import numpy as np
import pytest

from qpnls import cauchy, newton, spectral
from qpnls.data_structures import CauchySettings, ModeData, ModeSet, ProblemSpec, TruncationSpec
from qpnls.helpers import (
    AdmissibilityError,
    DimensionMismatchError,
    ExcisionError,
    IntegratorDisagreementError,
    ProjectionOverflowError,
)


@pytest.fixture
def plane_wave_u0():
    return spectral.spatial_from_entries({(2,): 0.3}, radius=4, d=1)


@pytest.fixture
def settings():
    return CauchySettings(
        radius_factor=2.0,
        tail_amplitude=0.1,
        horizon=1.0,
        samples=5,
        envelope_constant=10.0,
        match_tolerance=1e-10,
        aux_order=1,
    )


class TestProjection:
    @pytest.mark.parametrize(
        "delta, factor, radius", [
            (0.0, 2.0, 2),
            (1e-3, 2.0, 6),
            (0.01, 2.0, 4),
            (0.01, 0.5, 2),
        ]
    )
    def test_projection_radius(self, plane_wave_spec, plane_wave_modes, delta, factor, radius):
        # Setup
        spec = plane_wave_spec._replace(delta=delta)
        # Exercise
        # Verify
        assert cauchy.projection_radius(spec, plane_wave_modes, factor) == radius
        # Cleanup - none

    @pytest.mark.parametrize("delta, horizon", [(0.0, 10.0), (0.01, 0.01 ** -1.2)])
    def test_default_horizon(self, plane_wave_spec, delta, horizon):
        # Setup
        spec = plane_wave_spec._replace(delta=delta)
        # Exercise
        # Verify
        assert cauchy.default_horizon(spec) == pytest.approx(horizon)
        # Cleanup - none


class TestSplitInitialData:
    def test_generic_part_is_separated(self, plane_wave_modes, plane_wave_spec):
        # Setup
        u0 = spectral.spatial_from_entries({(2,): 0.3, (0,): 0.01, (-3,): 0.001j}, 4, 1)
        # Exercise
        u1, u2 = cauchy.split_initial_data(u0, plane_wave_modes, plane_wave_spec)
        # Verify
        assert spectral.spatial_entries(u1) == {(2,): 0.3}
        assert spectral.spatial_entries(u2) == {(0,): 0.01, (-3,): 0.001j}
        # Cleanup - none

    def test_large_tail_is_not_admissible(self, plane_wave_modes, plane_wave_spec):
        # Setup
        u0 = spectral.spatial_from_entries({(2,): 0.3, (0,): 0.2}, 4, 1)
        # Exercise
        # Verify
        with pytest.raises(AdmissibilityError) as admissibility_error:
            cauchy.split_initial_data(u0, plane_wave_modes, plane_wave_spec)
        assert str(admissibility_error.value) == (
            "The non-generic part of the initial data has norm 2.000e-01, above 10.0 |delta|."
        )
        # Cleanup - none

    def test_built_initial_data(self, plane_wave_modes, plane_wave_spec):
        # Setup
        mode_data = ModeData(a=np.array([0.3]), theta=np.array([0.5]))
        # Exercise
        u0 = cauchy.build_initial_data(plane_wave_modes, mode_data, plane_wave_spec, 0.1, 4, 3)
        # Verify
        u1, u2 = cauchy.split_initial_data(u0, plane_wave_modes, plane_wave_spec)
        assert spectral.spatial_entries(u1) == pytest.approx({(2,): 0.3 * np.exp(-0.5j)})
        assert 0 < spectral.analytic_norm(u2, 1.0) <= 10 * 0.01
        assert np.array_equal(
            u0.coefficients,
            cauchy.build_initial_data(
                plane_wave_modes, mode_data, plane_wave_spec, 0.1, 4, 3
            ).coefficients,
        )
        # Cleanup - none


class TestMatchProblem:
    def test_window_and_seeds(self, plane_wave_modes, plane_wave_spec):
        # Setup
        u0 = spectral.spatial_from_entries({(2,): 0.3, (-1,): 0.02}, 4, 1)
        # Exercise
        problem = cauchy.build_match_problem(u0, plane_wave_modes, plane_wave_spec)
        # Verify
        assert problem.projection_radius == 4
        assert problem.window == tuple((j,) for j in range(-4, 5))
        assert problem.modes.generic_indices == (6,)
        assert problem.seed_coefficients[6] == 0.3
        assert problem.target_beta_vec[3] == 0.02
        assert np.count_nonzero(problem.target_beta_vec) == 1
        assert np.count_nonzero(problem.alpha_vec) == 0
        # Cleanup - none

    def test_window_overflow(self, plane_wave_spec):
        # Setup
        modes = ModeSet(modes=((2, 0),), generic_indices=(0,))
        spec = plane_wave_spec._replace(d=2)
        u0 = spectral.spatial_from_entries({(2, 0): 0.3}, 4, 2)
        # Exercise
        # Verify
        with pytest.raises(ProjectionOverflowError) as overflow_error:
            cauchy.build_match_problem(u0, modes, spec)
        assert str(overflow_error.value) == (
            "The projection window of radius 4 holds 81 frequencies."
        )
        # Cleanup - none

    def test_truncation_widens_to_the_window(self, plane_wave_modes, plane_wave_spec):
        # Setup
        u0 = spectral.spatial_from_entries({(2,): 0.3}, 4, 1)
        problem = cauchy.build_match_problem(u0, plane_wave_modes, plane_wave_spec)
        # Exercise
        trunc = cauchy.match_truncation(TruncationSpec(N=2, J_x=3, K=2), problem, 1)
        # Verify
        assert trunc == TruncationSpec(N=2, J_x=4, K=2, aux_order=1)
        # Cleanup - none

    def test_window_mode_data(self, plane_wave_modes, plane_wave_spec):
        # Setup
        u0 = spectral.spatial_from_entries({(2,): 0.3}, 4, 1)
        problem = cauchy.build_match_problem(u0, plane_wave_modes, plane_wave_spec)
        alpha = np.zeros(9, dtype=complex)
        alpha[0] = 1e-16
        alpha[6] = 0.1j
        alpha[8] = -0.02
        # Exercise
        mode_data = cauchy.window_mode_data(problem, alpha)
        # Verify
        assert mode_data.a[0] == 0.0
        assert mode_data.theta[0] == 0.0
        assert mode_data.a[6] == pytest.approx(np.sqrt(0.1))
        assert mode_data.a[6] * np.exp(-1j * mode_data.theta[6]) == pytest.approx(0.3 + 0.1j)
        assert mode_data.theta[8] == pytest.approx(np.pi)
        # Cleanup - none


class TestMatchMap:
    def test_linear_map_is_the_identity(self, plane_wave_modes, linear_spec, plane_wave_u0):
        # Setup
        problem = cauchy.build_match_problem(plane_wave_u0, plane_wave_modes, linear_spec)
        trunc = cauchy.match_truncation(TruncationSpec(N=2, J_x=2, K=2), problem, 1)
        generator = np.random.default_rng(8)
        alpha = 0.01 * (generator.standard_normal(5) + 1j * generator.standard_normal(5))
        # Exercise
        image = cauchy.match_map(alpha, problem, linear_spec, trunc)
        # Verify
        assert problem.window == ((-2,), (-1,), (0,), (1,), (2,))
        assert image == pytest.approx(alpha, abs=1e-14)
        # Cleanup - none

    def test_linear_jacobian_is_the_identity(self, plane_wave_modes, linear_spec, plane_wave_u0):
        # Setup
        problem = cauchy.build_match_problem(plane_wave_u0, plane_wave_modes, linear_spec)
        trunc = cauchy.match_truncation(TruncationSpec(N=2, J_x=2, K=2), problem, 1)
        alpha = np.full(5, 0.01 + 0.01j)
        # Exercise
        jacobian = cauchy.match_jacobian(alpha, problem, linear_spec, trunc, threads=2)
        # Verify
        assert jacobian == pytest.approx(np.eye(10), abs=1e-6)
        # Cleanup - none

    @pytest.mark.slow
    def test_matching_around_the_plane_wave(self, plane_wave_modes, plane_wave_spec):
        # Setup
        mode_data = ModeData(a=np.array([0.3]), theta=np.array([0.0]))
        u0 = cauchy.build_initial_data(plane_wave_modes, mode_data, plane_wave_spec, 0.1, 4, 5)
        problem = cauchy.build_match_problem(u0, plane_wave_modes, plane_wave_spec)
        trunc = cauchy.match_truncation(TruncationSpec(N=2, J_x=4, K=2), problem, 1)
        # Exercise
        alpha, solution = cauchy.solve_match(problem, plane_wave_spec, trunc, threads=2)
        # Verify
        image = cauchy.match_map(alpha, problem, plane_wave_spec, trunc)
        assert np.linalg.norm(image - problem.target_beta_vec) <= 1e-10
        v0 = cauchy.initial_slice(solution, 4)
        assert np.max(np.abs(v0.coefficients - u0.coefficients)) <= 1e-9
        # Cleanup - none


class TestOracle:
    def test_plane_wave_is_integrated_exactly(self, plane_wave_spec, plane_wave_u0):
        # Setup - none
        # Exercise
        trajectory = cauchy.oracle_integrate(plane_wave_u0, plane_wave_spec, 1.0, samples=3)
        # Verify
        final = spectral.from_spectrum(trajectory.states[-1], 4)
        expected = 0.3 * np.exp(-1j * (4.0 + 0.01 * 0.09))
        assert trajectory.dt == 1e-3
        assert trajectory.times.tolist() == pytest.approx([0.0, 0.5, 1.0])
        assert spectral.spatial_entries(final, 1e-12) == pytest.approx({(2,): expected})
        # Cleanup - none

    def test_mass_and_hamiltonian_are_conserved(self, plane_wave_spec):
        # Setup
        u0 = spectral.spatial_from_entries({(1,): 0.5, (-2,): 0.4j, (0,): 0.1}, 4, 1)
        spec = plane_wave_spec._replace(delta=0.1)
        # Exercise
        trajectory = cauchy.oracle_integrate(u0, spec, 1.0, samples=5)
        # Verify
        assert trajectory.mass == pytest.approx(np.full(5, 0.42), rel=1e-12)
        assert trajectory.hamiltonian == pytest.approx(
            np.full(5, trajectory.hamiltonian[0]), rel=1e-4
        )
        # Cleanup - none

    def test_invariants_of_the_plane_wave(self, plane_wave_spec, plane_wave_u0):
        # Setup
        spectrum = spectral.to_spectrum(plane_wave_u0, 16)
        # Exercise
        # Verify
        assert cauchy.mass(spectrum) == pytest.approx(0.09)
        assert cauchy.hamiltonian(spectrum, plane_wave_spec) == pytest.approx(
            4 * 0.09 + 0.01 / 2 * 0.3 ** 4
        )
        # Cleanup - none

    def test_grid_below_four_times_the_radius(self, plane_wave_spec, plane_wave_u0):
        # Setup - none
        # Exercise
        # Verify
        with pytest.raises(DimensionMismatchError) as grid_error:
            cauchy.oracle_integrate(plane_wave_u0, plane_wave_spec, 1.0, grid_size=8)
        assert str(grid_error.value) == (
            "The oracle grid of 8 points is below 4 times the radius 4."
        )
        # Cleanup - none

    @pytest.mark.parametrize(
        "radius, d, step", [
            (4, 1, 1e-3),
            (20, 1, 2.5e-4),
            (10, 2, 5e-4),
        ]
    )
    def test_default_oracle_step(self, radius, d, step):
        # Setup
        frequency = cauchy.box_frequency(radius, d)
        # Exercise
        # Verify
        assert frequency == d * radius ** 2
        assert cauchy.default_oracle_step(frequency) == pytest.approx(step)
        # Cleanup - none

    def test_step_halving_settles_on_the_plane_wave(self, plane_wave_spec, plane_wave_u0):
        # Setup - none
        # Exercise
        trajectory = cauchy.oracle_integrate(
            plane_wave_u0, plane_wave_spec, 1.0, samples=3, halving_tolerance=1e-9
        )
        # Verify
        assert trajectory.dt == pytest.approx(5e-4)
        assert trajectory.mass == pytest.approx(np.full(3, 0.09), rel=1e-12)
        # Cleanup - none

    def test_step_halving_that_does_not_settle(self, plane_wave_spec):
        # Setup
        u0 = spectral.spatial_from_entries({(1,): 0.5, (-2,): 0.4j, (0,): 0.1}, 4, 1)
        spec = plane_wave_spec._replace(delta=0.1)
        # Exercise
        # Verify
        with pytest.raises(IntegratorDisagreementError) as halving_error:
            cauchy.oracle_integrate(u0, spec, 1.0, dt=0.05, samples=3, halving_tolerance=1e-15)
        assert str(halving_error.value).startswith("The oracle still changes by ")
        assert str(halving_error.value).endswith(" after 4 step halvings.")
        # Cleanup - none


class TestRemainder:
    def test_direct_and_duhamel_remainders_agree(self, plane_wave_modes, plane_wave_spec):
        # Setup
        solution = newton.run_scheme(
            plane_wave_spec,
            plane_wave_modes,
            ModeData(a=np.array([0.3]), theta=np.array([0.0])),
            TruncationSpec(N=2, J_x=4, K=3),
        )
        w0 = spectral.spatial_from_entries({(0,): 1e-4}, 4, 1)
        # Exercise
        report = cauchy.remainder_evolution(w0, solution, plane_wave_spec, 0.5, samples=3)
        # Verify
        assert report.direct_norms[0] == pytest.approx(1e-4)
        assert report.agreement <= 1e-7
        assert report.bound_ok
        # Cleanup - none

    def test_disagreeing_remainders(self, mocker, plane_wave_modes, plane_wave_spec):
        # Setup
        solution = newton.run_scheme(
            plane_wave_spec,
            plane_wave_modes,
            ModeData(a=np.array([0.3]), theta=np.array([0.0])),
            TruncationSpec(N=2, J_x=4, K=3),
        )
        w0 = spectral.spatial_from_entries({(0,): 1e-4}, 4, 1)
        original = cauchy._duhamel_remainder
        mocker.patch(
            "qpnls.cauchy._duhamel_remainder",
            side_effect=lambda *args: [state + 1e-3 for state in original(*args)],
        )
        # Exercise
        # Verify
        with pytest.raises(IntegratorDisagreementError) as agreement_error:
            cauchy.remainder_evolution(w0, solution, plane_wave_spec, 0.5, samples=3)
        assert str(agreement_error.value).startswith(
            "The direct and Duhamel remainders differ by "
        )
        assert str(agreement_error.value).endswith(", above 1.0e-06.")
        # Cleanup - none

    @pytest.mark.slow
    def test_remainders_agree_over_ten_time_units(self, plane_wave_modes, plane_wave_spec):
        # Setup
        solution = newton.run_scheme(
            plane_wave_spec,
            plane_wave_modes,
            ModeData(a=np.array([0.3]), theta=np.array([0.0])),
            TruncationSpec(N=2, J_x=4, K=3),
        )
        w0 = spectral.spatial_from_entries({(0,): 1e-4, (-1,): 5e-5j}, 4, 1)
        # Exercise
        report = cauchy.remainder_evolution(w0, solution, plane_wave_spec, 10.0, samples=3)
        # Verify
        assert report.times.tolist() == pytest.approx([0.0, 5.0, 10.0])
        assert report.agreement <= 1e-6
        assert report.bound_ok
        # Cleanup - none


class TestValidateCauchy:
    def test_linear_problem(self, plane_wave_modes, linear_spec, plane_wave_u0, settings):
        # Setup
        trunc = TruncationSpec(N=2, J_x=4, K=2)
        # Exercise
        result = cauchy.validate_cauchy(
            plane_wave_u0, linear_spec, plane_wave_modes, trunc, settings, threads=2
        )
        # Verify
        assert result.passed
        assert result.init_error <= 1e-14
        assert np.max(result.trajectory_errors) <= 1e-9
        assert result.times.tolist() == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])
        assert result.remainder is not None
        assert result.remainder_bound_ok
        assert np.count_nonzero(result.alpha_vec) == 0
        # Cleanup - none

    @pytest.mark.slow
    def test_plane_wave_with_a_small_tail(self, plane_wave_modes, plane_wave_spec, settings):
        # Setup
        mode_data = ModeData(a=np.array([0.3]), theta=np.array([0.0]))
        u0 = cauchy.build_initial_data(plane_wave_modes, mode_data, plane_wave_spec, 0.1, 4, 5)
        trunc = TruncationSpec(N=2, J_x=4, K=2)
        # Exercise
        result = cauchy.validate_cauchy(
            u0, plane_wave_spec, plane_wave_modes, trunc, settings, threads=2,
            check_remainder=False,
        )
        # Verify
        assert result.init_error <= 1e-8
        assert np.all(result.trajectory_errors <= result.envelope)
        assert result.remainder is None
        assert result.passed
        # Cleanup - none

    def test_excised_amplitudes_are_refused(
        self, mocker, plane_wave_modes, plane_wave_spec, plane_wave_u0, settings
    ):
        # Setup
        spec = plane_wave_spec._replace(epsilon=10.0)
        mode_data = ModeData(a=np.array([0.3]), theta=np.array([0.0]))
        solve_match = mocker.patch("qpnls.cauchy.solve_match")
        # Exercise
        # Verify
        with pytest.raises(ExcisionError) as excision_error:
            cauchy.validate_cauchy(
                plane_wave_u0,
                spec,
                plane_wave_modes,
                TruncationSpec(N=4, J_x=10, K=5),
                settings,
                mode_data=mode_data,
            )
        assert excision_error.value.stage == "excise"
        assert str(excision_error.value).startswith(
            "The amplitudes fall in the excised set at epsilon = 10: "
        )
        solve_match.assert_not_called()
        # Cleanup - none

    @pytest.mark.slow
    def test_two_modes_up_to_the_default_horizon(self, two_modes, two_mode_data, settings):
        # Setup
        spec = ProblemSpec(
            d=1, p=1, delta=1e-2, r=3.0, weight_beta=1.0, weight_beta_prime=0.5, epsilon=1e-3
        )
        u0 = cauchy.build_initial_data(two_modes, two_mode_data, spec, 0.1, 4, 5)
        trunc = TruncationSpec(N=4, J_x=10, K=5)
        long_run = settings._replace(horizon=None, samples=11, halving_tolerance=None)
        # Exercise
        result = cauchy.validate_cauchy(
            u0, spec, two_modes, trunc, long_run, threads=2, check_remainder=False
        )
        # Verify
        assert result.times[-1] == pytest.approx(cauchy.default_horizon(spec))
        assert np.all(result.trajectory_errors <= result.envelope)
        assert result.passed
        # Cleanup - none
