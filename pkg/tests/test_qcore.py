import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import inertia_min_eigenvalue, ket_overlap, loop_partial_trace
from robust_selftest.bell import MeasurementAngles, chsh_operator
from robust_selftest.config import DEFAULT_TOL, Tolerances
from robust_selftest.qcore import (
    I2,
    SX,
    SY,
    SZ,
    DensityMatrix,
    fidelity,
    ket,
    min_eigenvalue,
    partial_trace,
    pauli_expansion,
    pauli_resum,
    permute_factors,
    ptrace,
    random_density_matrix,
    random_pure_state,
    sqrtm_psd,
    tensor,
)
from robust_selftest.states import TAU11_PAULI, ghz, tau_component, werner


def random_hermitian(rng, d):
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (g + g.conj().T) / 2


class TestTensor:
    def test_identity(self):
        np.testing.assert_array_equal(tensor(I2, I2), np.eye(4))

    def test_diagonal(self):
        np.testing.assert_array_equal(tensor(SZ, SZ), np.diag([1, -1, -1, 1]))

    def test_involution(self):
        xx = tensor(SX, SX)
        np.testing.assert_allclose(xx @ xx, np.eye(4))

    def test_dimension_is_product(self):
        assert tensor(I2, np.eye(4), SX).shape == (16, 16)

    def test_needs_operand(self):
        with pytest.raises(ValueError):
            tensor()


class TestDensityMatrix:
    def test_rejects_bad_trace(self):
        with pytest.raises(ValueError, match="trace"):
            DensityMatrix(np.eye(2), (2,))

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError, match="Hermitian"):
            DensityMatrix(np.array([[0.5, 0.1], [0.0, 0.5]]), (2,))

    def test_rejects_negative(self):
        with pytest.raises(ValueError, match="negative"):
            DensityMatrix(np.diag([1.5, -0.5]), (2,))

    def test_rejects_dims_mismatch(self):
        with pytest.raises(ValueError, match="dims"):
            DensityMatrix(np.eye(4) / 4, (2,))

    def test_matrix_is_read_only(self):
        rho = DensityMatrix(np.eye(2) / 2, (2,))
        with pytest.raises(ValueError):
            rho.matrix[0, 0] = 1

    def test_random_states_are_valid(self, rng):
        for n in (1, 2, 3, 4):
            rho = random_density_matrix(n, rng)
            assert abs(np.trace(rho.matrix) - 1) < 1e-10
            assert rho.eigenvalues()[0] >= -1e-10

    def test_permute_swaps_factors(self):
        rho = DensityMatrix.from_ket(ket("01"))
        np.testing.assert_allclose(rho.permute([1, 0]).matrix, np.outer(ket("10"), ket("10")))


class TestPartialTrace:
    def test_maximally_mixed_marginal(self):
        phi = DensityMatrix.from_ket(ket("00") + ket("11"))
        np.testing.assert_allclose(partial_trace(phi, [0]).matrix, I2 / 2, atol=1e-15)

    def test_product_state(self, rng):
        rho, sigma = random_density_matrix(1, rng), random_density_matrix(2, rng)
        np.testing.assert_allclose(partial_trace(rho.kron(sigma), [0]).matrix, rho.matrix, atol=1e-14)

    def test_ghz_two_qubit_marginal(self):
        expected = (np.outer(ket("00"), ket("00")) + np.outer(ket("11"), ket("11"))) / 2
        np.testing.assert_allclose(partial_trace(ghz(), [0, 1]).matrix, expected, atol=1e-15)

    def test_matches_loop_oracle(self, rng):
        rho = random_density_matrix(4, rng)
        for keep in ([0], [1, 3], [0, 2, 3]):
            np.testing.assert_allclose(ptrace(rho.matrix, rho.dims, keep), loop_partial_trace(rho.matrix, rho.dims, keep), atol=1e-14)

    def test_sequential_equals_joint(self, rng):
        rho = random_density_matrix(4, rng)
        joint = partial_trace(rho, [0, 3])
        step = partial_trace(partial_trace(rho, [0, 1, 3]), [0, 2])
        assert np.abs(joint.matrix - step.matrix).max() <= 1e-12

    @pytest.mark.parametrize("keep", [[], [2], [-1]])
    def test_invalid_index_set(self, keep):
        with pytest.raises(ValueError):
            partial_trace(werner(0.5), keep)

    def test_permute_round_trip(self, rng):
        m = random_density_matrix(3, rng).matrix
        order = [2, 0, 1]
        inverse = list(np.argsort(order))
        back = permute_factors(permute_factors(m, [2, 2, 2], order), [2, 2, 2], inverse)
        np.testing.assert_allclose(back, m)


class TestMinEigenvalue:
    def test_pauli_z(self):
        assert min_eigenvalue(SZ) == pytest.approx(-1)

    def test_identity(self):
        assert min_eigenvalue(np.eye(4)) == pytest.approx(1)

    def test_chsh_operator(self):
        w = chsh_operator(MeasurementAngles(np.pi / 4, np.pi / 4)).matrix
        assert min_eigenvalue(w) == pytest.approx(-2 * np.sqrt(2), abs=1e-12)

    def test_matches_inertia_oracle(self, rng):
        for d in (2, 4, 8, 16):
            m = random_hermitian(rng, d)
            assert abs(min_eigenvalue(m) - inertia_min_eigenvalue(m)) <= 1e-10

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError, match="Hermitian"):
            min_eigenvalue(np.array([[0, 1], [0, 0]]))


class TestSqrtm:
    def test_squares_back(self, rng):
        rho = random_density_matrix(3, rng).matrix
        root = sqrtm_psd(rho)
        np.testing.assert_allclose(root @ root, rho, atol=1e-13)

    def test_clamps_rounding_noise(self):
        root = sqrtm_psd(np.diag([1.0, -1e-12]))
        np.testing.assert_allclose(root, np.diag([1.0, 0.0]))

    def test_rejects_negative(self):
        with pytest.raises(ValueError, match="positive semidefinite"):
            sqrtm_psd(np.diag([1.0, -1e-6]))

    def test_tolerance_is_configurable(self):
        loose = Tolerances().with_overrides({"psd": 1e-5})
        sqrtm_psd(np.diag([1.0, -1e-6]), loose)

    def test_unknown_tolerance(self):
        with pytest.raises(KeyError):
            DEFAULT_TOL.with_overrides({"nonsense": 1.0})


class TestFidelity:
    def test_self(self, rng):
        rho = random_density_matrix(2, rng)
        assert fidelity(rho, rho) == pytest.approx(1, abs=1e-10)

    def test_orthogonal(self):
        assert fidelity(DensityMatrix.from_ket(ket("0")), DensityMatrix.from_ket(ket("1"))) == 0

    def test_werner_overlap(self):
        phi = DensityMatrix.from_ket(ket("00") + ket("11"))
        assert fidelity(werner(0.8), phi) == pytest.approx(0.85, abs=1e-12)

    def test_pure_target_matches_overlap(self, rng):
        for _ in range(20):
            rho = random_density_matrix(2, rng)
            psi = rng.normal(size=4) + 1j * rng.normal(size=4)
            sigma = DensityMatrix.from_ket(psi)
            assert abs(fidelity(rho, sigma) - ket_overlap(rho.matrix, psi)) <= 1e-9

    def test_symmetric(self, rng):
        for _ in range(100):
            rho, sigma = random_density_matrix(2, rng), random_density_matrix(2, rng, rank=2)
            assert abs(fidelity(rho, sigma) - fidelity(sigma, rho)) <= 1e-9

    def test_pure_pair_is_overlap_squared(self, rng):
        a, b = random_pure_state(3, rng), random_pure_state(3, rng)
        assert fidelity(a, b) == pytest.approx(np.trace(a.matrix @ b.matrix).real, abs=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            fidelity(np.eye(2) / 2, np.eye(4) / 4)


class TestPauliExpansion:
    def test_identity(self):
        coeffs = pauli_expansion(np.eye(4))
        assert coeffs["II"] == 1
        assert all(v == 0 for k, v in coeffs.items() if k != "II")

    def test_tau11_coefficients(self):
        coeffs = pauli_expansion(tau_component("11").matrix)
        r = 0.25 / np.sqrt(2)
        expected = {"II": 0.25, "XX": r, "XZ": r, "ZX": r, "ZZ": -r, "YY": 0.25}
        for label, value in coeffs.items():
            assert value == pytest.approx(expected.get(label, 0.0), abs=1e-12), label

    def test_round_trip(self, rng):
        for d in (2, 4, 8):
            m = random_hermitian(rng, d)
            assert np.abs(pauli_resum(pauli_expansion(m)) - m).max() <= 1e-10

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError, match="power of 2"):
            pauli_expansion(np.eye(3))

    def test_resum_of_table(self):
        np.testing.assert_allclose(pauli_resum(TAU11_PAULI), tau_component("11").matrix, atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=16, max_size=16))
    def test_real_coefficients(self, values):
        m = pauli_resum(dict(zip(pauli_expansion(np.eye(4)), values)))
        coeffs = pauli_expansion(m)
        np.testing.assert_allclose(list(coeffs.values()), values, atol=1e-12)

    def test_y_is_hermitian_basis(self):
        assert pauli_expansion(SY)["Y"] == 1
