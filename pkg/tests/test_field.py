import numpy as np
import pytest

from qpnls import field
from qpnls.data_structures import LatticeSite, ModeData, ModeSet, TruncationSpec
from qpnls.helpers import DimensionMismatchError, TruncationAsymmetryError


def site(n, j):
    return LatticeSite(n=tuple(n), j=tuple(j))


def random_field(generator, size=5, B=2, d=1, radius=3):
    coords = generator.integers(-radius, radius + 1, size=(size, B + d))
    values = generator.standard_normal(size) + 1j * generator.standard_normal(size)
    return field.make_field(coords, values, B, None)


class TestMakeField:
    def test_repeated_sites_are_summed_and_zeros_dropped(self):
        # Setup
        coords = np.array([[0, 1], [0, 1], [1, 0], [2, 2]])
        values = np.array([1.0, 2.0j, 0.5, 0.0])
        # Exercise
        result = field.make_field(coords, values, 1, None)
        # Verify
        assert field.entries(result) == {site((0,), (1,)): 1 + 2j, site((1,), (0,)): 0.5}
        # Cleanup - none

    def test_mismatched_values_are_rejected(self):
        # Setup
        coords = np.array([[0, 1], [1, 0]])
        # Exercise
        # Verify
        with pytest.raises(DimensionMismatchError):
            field.make_field(coords, np.array([1.0]), 1, None)
        # Cleanup - none

    def test_ansatz_pins_the_amplitudes_on_the_resonant_sites(self):
        # Setup
        modes = ModeSet(modes=((1,), (-2,)), generic_indices=(0, 1))
        mode_data = ModeData(a=np.array([0.5, 0.4]), theta=np.zeros(2))
        # Exercise
        u = field.ansatz(modes, mode_data, None)
        # Verify
        assert field.entries(u) == {site((-1, 0), (1,)): 0.5, site((0, -1), (-2,)): 0.4}
        # Cleanup - none


class TestAnalyticNorm:
    @pytest.mark.parametrize(
        "entries, beta, expected", [
            ({}, 1.0, 0.0),
            ({site((3,), (0,)): 0.5}, 2.0, 0.5),
            (
                {site((0,), (3,)): 0.1, site((0,), (-1,)): 0.2},
                0.1,
                0.1 * np.exp(0.3) + 0.2 * np.exp(0.1),
            ),
        ]
    )
    def test_direct_summation(self, entries, beta, expected):
        # Setup
        f = field.from_entries(entries, 1, 1, None)
        # Exercise
        norm = field.analytic_norm(f, beta)
        # Verify
        assert norm == pytest.approx(expected, rel=1e-14)
        # Cleanup - none

    def test_homogeneity_and_triangle_inequality(self):
        # Setup
        generator = np.random.default_rng(3)
        f = random_field(generator)
        g = random_field(generator)
        # Exercise
        scaled = field.analytic_norm(field.scale(f, -2.5j), 0.7)
        total = field.analytic_norm(field.add(f, g), 0.7)
        # Verify
        assert scaled == pytest.approx(2.5 * field.analytic_norm(f, 0.7), rel=1e-13)
        assert total <= field.analytic_norm(f, 0.7) + field.analytic_norm(g, 0.7) + 1e-12
        # Cleanup - none

    def test_time_weight_defaults_to_a_quarter_of_beta(self, plane_wave_spec):
        # Setup
        f = field.from_entries({site((-2,), (1,)): 1.0}, 1, 1, None)
        # Exercise
        norm = field.space_time_norm(f, plane_wave_spec)
        # Verify
        assert norm == pytest.approx(np.exp(1.0 + 2 * 0.25))
        # Cleanup - none


class TestConjugateField:
    def test_real_amplitude(self):
        # Setup
        u = field.from_entries({site((-1,), (1,)): 0.3}, 1, 1, None)
        # Exercise
        v = field.conjugate_field(u)
        # Verify
        assert field.entries(v) == {site((1,), (-1,)): 0.3}
        # Cleanup - none

    def test_imaginary_amplitude(self):
        # Setup
        u = field.from_entries({site((0,), (2,)): 1j}, 1, 1, None)
        # Exercise
        v = field.conjugate_field(u)
        # Verify
        assert field.entries(v) == {site((0,), (-2,)): -1j}
        # Cleanup - none

    def test_involution_and_norm_preservation(self):
        # Setup
        f = random_field(np.random.default_rng(11))
        # Exercise
        twice = field.conjugate_field(field.conjugate_field(f))
        # Verify
        assert field.entries(twice) == field.entries(f)
        assert field.analytic_norm(field.conjugate_field(f), 0.4) == pytest.approx(
            field.analytic_norm(f, 0.4)
        )
        # Cleanup - none

    def test_asymmetric_truncation_is_rejected(self):
        # Setup
        trunc = TruncationSpec(N=2, J_x=2, K=1)
        u = field.make_field(np.array([[0, 3]]), np.array([1.0]), 1, trunc)
        # Exercise
        # Verify
        with pytest.raises(TruncationAsymmetryError) as asymmetry_error:
            field.conjugate_field(u)
        assert str(asymmetry_error.value) == (
            "1 reflected sites fall outside the truncation."
        )
        # Cleanup - none


class TestEvaluate:
    def test_single_entry_at_the_origin(self):
        # Setup
        u = field.from_entries({site((-1,), (2,)): 0.3}, 1, 1, None)
        # Exercise
        value = field.evaluate(u, np.array([4.0]), np.array([0.7]), 0.0, [0.0])
        # Verify
        assert value == pytest.approx(0.3 * np.exp(-0.7j))
        # Cleanup - none

    def test_plane_wave_at_arbitrary_time(self):
        # Setup
        u = field.from_entries({site((-1,), (2,)): 0.3}, 1, 1, None)
        t, x = 1.3, 0.4
        # Exercise
        value = field.evaluate(u, np.array([4.0009]), np.array([0.5]), t, [x])
        # Verify
        assert value == pytest.approx(0.3 * np.exp(-1j * (0.5 + 4.0009 * t)) * np.exp(2j * x))
        # Cleanup - none

    def test_agreement_with_term_by_term_summation(self):
        # Setup
        generator = np.random.default_rng(5)
        u = random_field(generator)
        omega, theta = np.array([1.0, 4.1]), np.array([0.2, 1.1])
        t, x = 0.37, 2.1
        # Exercise
        value = field.evaluate(u, omega, theta, t, [x])
        # Verify
        expected = sum(
            amplitude * np.exp(1j * np.dot(s.n, theta + omega * t)) * np.exp(1j * s.j[0] * x)
            for s, amplitude in field.entries(u).items()
        )
        assert value == pytest.approx(expected, abs=1e-13)
        # Cleanup - none

    def test_wrong_point_dimension(self):
        # Setup
        u = field.from_entries({site((0,), (1,)): 1.0}, 1, 1, None)
        # Exercise
        # Verify
        with pytest.raises(DimensionMismatchError):
            field.evaluate(u, np.array([1.0]), np.array([0.0]), 0.0, [0.0, 1.0])
        # Cleanup - none


class TestTimeSlice:
    def test_single_site_at_time_zero(self):
        # Setup
        u = field.from_entries({site((-1,), (1,)): 0.5}, 1, 1, None)
        # Exercise
        psi = field.time_slice(u, np.array([1.0]), np.array([0.3]), 0.0, radius=2)
        # Verify
        assert psi.radius == 2
        assert psi.coefficients[3] == pytest.approx(0.5 * np.exp(-0.3j))
        assert np.count_nonzero(psi.coefficients) == 1
        # Cleanup - none

    def test_two_sites_with_the_same_j_are_summed_with_their_phases(self):
        # Setup
        u = field.from_entries({site((-1, 0), (1,)): 0.5, site((0, 1), (1,)): 0.2}, 2, 1, None)
        omega, theta, t = np.array([1.0, 4.0]), np.array([0.1, 0.2]), 0.8
        # Exercise
        psi = field.time_slice(u, omega, theta, t, radius=1)
        # Verify
        expected = 0.5 * np.exp(-1j * (0.1 + t)) + 0.2 * np.exp(1j * (0.2 + 4.0 * t))
        assert psi.coefficients[2] == pytest.approx(expected)
        # Cleanup - none

    def test_consistency_with_evaluate(self):
        # Setup
        generator = np.random.default_rng(8)
        u = random_field(generator)
        omega, theta = np.array([1.0, 4.0]), np.array([0.0, 0.5])
        # Exercise
        for t, x in generator.uniform(0, 2 * np.pi, size=(10, 2)):
            psi = field.time_slice(u, omega, theta, t)
            j = np.arange(-psi.radius, psi.radius + 1)
            from_slice = (psi.coefficients * np.exp(1j * j * x)).sum()
            # Verify
            assert from_slice == pytest.approx(field.evaluate(u, omega, theta, t, [x]), abs=1e-12)
        # Cleanup - none
