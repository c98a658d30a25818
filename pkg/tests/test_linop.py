import numpy as np
import pytest

from qpnls import field, lattice, linop, nonlinear
from qpnls.data_structures import LatticeSite, TruncationSpec
from qpnls.helpers import EmptyRestrictionError, SingularOperatorError


@pytest.fixture
def small_trunc():
    return TruncationSpec(N=2, J_x=4, K=1)


@pytest.fixture
def ansatz_pair(two_modes, two_mode_data, small_trunc):
    u = field.ansatz(two_modes, two_mode_data, small_trunc)
    return u, field.conjugate_field(u)


class TestAssemble:
    def test_linear_operator_is_diagonal(self, two_modes, linear_spec, small_trunc, ansatz_pair):
        # Setup
        u, v = ansatz_pair
        index = lattice.build_site_index(small_trunc, two_modes)
        omega = np.array([1.0, 4.0])
        # Exercise
        op = linop.assemble(u, v, omega, linear_spec, index)
        # Verify
        dense = op.matrix.toarray()
        n = index.coords[:, :2].astype(float)
        j = index.coords[:, 2].astype(float)
        assert np.count_nonzero(dense - np.diag(np.diag(dense))) == 0
        assert np.allclose(np.diag(dense)[:len(index)], n @ omega + j ** 2)
        assert np.allclose(np.diag(dense)[len(index):], -(n @ omega) + j ** 2)
        # Cleanup - none

    def test_columns_match_finite_differences_of_F(
        self, two_modes, two_mode_spec, small_trunc, ansatz_pair
    ):
        # Setup
        u, v = ansatz_pair
        spec = two_mode_spec._replace(delta=0.1)
        index = lattice.build_site_index(small_trunc, two_modes)
        omega = np.array([1.0, 4.0])
        op = linop.assemble(u, v, omega, spec, index)
        dense = op.matrix.toarray()
        h = 1e-6
        # Exercise
        for column in (0, len(index) // 2, len(index) - 1):
            direction = field.from_vector(
                np.eye(len(index))[column], index, small_trunc
            )
            F_plus, G_plus = nonlinear.evaluate_F(
                field.add(u, direction, h), v, omega, spec
            )
            F_minus, G_minus = nonlinear.evaluate_F(
                field.add(u, direction, -h), v, omega, spec
            )
            # Verify
            du = (field.to_vector(F_plus, index) - field.to_vector(F_minus, index)) / (2 * h)
            dv = (field.to_vector(G_plus, index) - field.to_vector(G_minus, index)) / (2 * h)
            assert np.allclose(dense[:len(index), column], du, atol=1e-8)
            assert np.allclose(dense[len(index):, column], dv, atol=1e-8)
        # Cleanup - none


class TestRestriction:
    def test_T_N_excludes_the_resonant_sites(
        self, two_modes, two_mode_spec, small_trunc, ansatz_pair
    ):
        # Setup
        u, v = ansatz_pair
        u_resonant, v_resonant = lattice.resonant_coords(two_modes)
        # Exercise
        op = linop.assemble_T_N(
            u, v, np.array([1.0, 4.0]), two_mode_spec, small_trunc, two_modes
        )
        # Verify
        assert np.all(op.u_index.ordinals(u_resonant) == -1)
        assert np.all(op.v_index.ordinals(v_resonant) == -1)
        assert len(op.u_index) == len(lattice.build_site_index(small_trunc, two_modes)) - 2
        # Cleanup - none

    def test_sublattice_restriction(self, two_modes, small_trunc):
        # Setup - none
        # Exercise
        u_index, v_index = linop.restriction(small_trunc, two_modes, sublattice=True)
        # Verify
        assert np.all(lattice.sublattice_mask(u_index.coords, two_modes))
        assert len(u_index) == len(v_index) == lattice.l1_ball_size(2, 2)
        # Cleanup - none

    def test_empty_restriction(self, two_modes, small_trunc):
        # Setup
        def nothing(coords):
            return np.zeros(coords.shape[0], dtype=bool)
        # Exercise
        # Verify
        with pytest.raises(EmptyRestrictionError) as empty_error:
            linop.restriction(small_trunc, two_modes, nothing)
        assert str(empty_error.value) == "The restriction retains no lattice site."
        # Cleanup - none


class TestSolve:
    @pytest.fixture
    def operator(self, two_modes, two_mode_spec, small_trunc, ansatz_pair):
        u, v = ansatz_pair
        return linop.assemble_T_N(
            u, v, np.array([1.1, 3.7]), two_mode_spec, small_trunc, two_modes
        )

    def test_solution_satisfies_the_system(self, operator, small_trunc):
        # Setup
        generator = np.random.default_rng(17)
        size = len(operator.u_index)
        rhs_u = field.from_vector(
            generator.standard_normal(size) + 1j * generator.standard_normal(size),
            operator.u_index,
            small_trunc,
        )
        rhs_v = field.conjugate_field(rhs_u)
        # Exercise
        report = linop.solve(operator, rhs_u, rhs_v)
        # Verify
        image_u, image_v = linop.apply(operator, report.u, report.v)
        assert report.residual <= 1e-10
        assert np.allclose(
            field.to_vector(image_u, operator.u_index), field.to_vector(rhs_u, operator.u_index)
        )
        assert np.allclose(
            field.to_vector(image_v, operator.v_index), field.to_vector(rhs_v, operator.v_index)
        )
        assert report.sigma_min > 0
        # Cleanup - none

    def test_zero_right_hand_side(self, operator, small_trunc):
        # Setup
        zero = field.zero_field(2, 1, small_trunc)
        # Exercise
        report = linop.solve(operator, zero, zero)
        # Verify
        assert report.u.values.size == 0
        assert report.v.values.size == 0
        assert np.isnan(report.condition_estimate)
        assert np.isnan(report.sigma_min)
        assert report.norm_ratio == 0.0
        # Cleanup - none

    def test_excision_threshold(self, operator, small_trunc):
        # Setup
        rhs = field.from_entries({LatticeSite(n=(0, 0), j=(0,)): 1.0}, 2, 1, small_trunc)
        # Exercise
        # Verify
        with pytest.raises(SingularOperatorError) as singular_error:
            linop.solve(operator, rhs, field.conjugate_field(rhs), threshold=1e6)
        assert singular_error.value.sigma_min < 1e6
        # Cleanup - none


class TestCoordinateRows:
    def test_entries_are_listed_column_by_column(self, two_modes, two_mode_spec, ansatz_pair):
        # Setup
        u, v = ansatz_pair
        index = lattice.build_site_index(TruncationSpec(N=1, J_x=2, K=1), two_modes)
        op = linop.assemble(u, v, np.array([1.0, 4.0]), two_mode_spec, index)
        # Exercise
        rows = list(linop.coordinate_rows(op))
        # Verify
        assert len(rows) == op.matrix.nnz
        assert [(col, row) for row, col, _, _ in rows] == sorted(
            (col, row) for row, col, _, _ in rows
        )
        dense = op.matrix.toarray()
        assert all(dense[row, col] == complex(re, im) for row, col, re, im in rows)
        # Cleanup - none
