import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from detangle.disentangle import (
    VARIANTS,
    PairTopology,
    pair_delta,
    pair_kernel,
    q_disentangle,
    tau_pair,
    tau_total,
)
from detangle.linalg import (
    SIGMA,
    embed_pair,
    kron,
    partial_trace,
    random_density_matrix,
    random_hermitian,
    random_pure_state,
    random_unitary,
)
from detangle.models import pure_class_state

BELL = np.outer([1, 0, 0, 1], [1, 0, 0, 1]) / 2


def product_state(L, rng):
    return kron(*[random_density_matrix(2, rng) for _ in range(L)])


def concurrence(psi):
    """Pure two-qubit concurrence 2|ad - bc| (test oracle only)."""
    a, b, c, d = psi
    return 2 * abs(a * d - b * c)


def brute_force_delta(rho):
    # independent of the module: marginals by explicit index sums
    r = rho.reshape(2, 2, 2, 2)  # (b, a, b', a')
    rho_a = np.einsum("ibjb->ij", r.transpose(1, 0, 3, 2))
    rho_b = np.einsum("ibjb->ij", r)
    return rho - np.kron(rho_b, rho_a)


class TestTopology:
    def test_two_spins(self):
        assert PairTopology.ring(2).pairs == ((1, 2),)

    def test_ring_five(self):
        assert PairTopology.ring(5).pairs == ((1, 2), (1, 5), (2, 3), (3, 4), (4, 5))

    def test_second_neighbours(self):
        assert PairTopology.neighbours(5, 2).pairs == ((1, 3), (1, 4), (2, 4), (2, 5), (3, 5))

    def test_rejects_bad_pairs(self):
        with pytest.raises(ValueError):
            PairTopology(3, ((2, 1),))


class TestPairDelta:
    def test_product_state(self, rng):
        rho = product_state(3, rng)
        for pair in [(1, 2), (1, 3), (2, 3)]:
            assert np.max(np.abs(pair_delta(rho, pair))) < 1e-15

    def test_bell(self):
        D = pair_delta(BELL, (1, 2))
        assert np.allclose(D, BELL - np.eye(4) / 4)
        assert np.trace(D @ D).real == pytest.approx(0.75, abs=1e-15)

    def test_traceless(self, rng):
        rho = random_density_matrix(16, rng)
        for pair in [(1, 2), (2, 4), (1, 4)]:
            assert abs(np.trace(pair_delta(rho, pair))) <= 1e-12


class TestQ:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_zero_on_product_states(self, rng, variant):
        for _ in range(10):
            rho = product_state(3, rng)
            Q = q_disentangle(rho, PairTopology.ring(3), variant)
            assert np.max(np.abs(Q)) < 1e-14

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_hermitian(self, rng, variant):
        rho = random_density_matrix(8, rng)
        Q = q_disentangle(rho, PairTopology.ring(3), variant)
        assert np.max(np.abs(Q - Q.conj().T)) <= 1e-14

    def test_bell_quadratic(self):
        D = brute_force_delta(BELL)
        oracle = np.trace(BELL @ D @ D).real
        assert oracle == pytest.approx(9 / 16, abs=1e-15)
        Q = q_disentangle(BELL, PairTopology.ring(2), "quadratic")
        assert np.trace(BELL @ Q).real == pytest.approx(9 / 16, abs=1e-14)
        assert tau_pair(BELL, (1, 2), "quadratic") == pytest.approx(9 / 16, abs=1e-14)

    def test_bell_gradient(self):
        assert tau_pair(BELL, (1, 2), "gradient") == pytest.approx(0.75, abs=1e-14)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_local_unitary_covariance(self, rng, variant):
        L = 3
        rho = random_density_matrix(8, rng)
        Ua, Ub = random_unitary(2, rng), random_unitary(2, rng)
        U = kron(np.eye(2), Ub, Ua)  # spin 1 <- Ua, spin 2 <- Ub
        top = PairTopology(L, ((1, 2),))
        lhs = q_disentangle(U @ rho @ U.conj().T, top, variant)
        rhs = U @ q_disentangle(rho, top, variant) @ U.conj().T
        assert np.max(np.abs(lhs - rhs)) <= 1e-11

    def test_gradient_kernel_is_derivative(self, rng):
        rho = random_density_matrix(8, rng)
        X = random_hermitian(8, rng)
        X -= np.trace(X) / 8 * np.eye(8)

        def f(r):
            D = pair_delta(r, (1, 3), 3)
            return np.trace(D @ D).real

        h = 1e-5
        fd = (f(rho + h * X) - f(rho - h * X)) / (2 * h)
        K = embed_pair(pair_kernel(rho, (1, 3), "gradient", 3), (1, 3), 3)
        assert np.trace(K @ X).real == pytest.approx(fd, rel=1e-8, abs=1e-10)


class TestTau:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_product_zero(self, rng, variant):
        assert tau_pair(product_state(2, rng), (1, 2), variant) == pytest.approx(0.0, abs=1e-15)

    def test_concurrence_formulas(self, rng):
        for _ in range(50):
            rho = random_pure_state(4, rng)
            psi = np.linalg.eigh(rho)[1][:, -1]
            x = concurrence(psi) ** 2 / 4
            D = brute_force_delta(rho)
            brute = np.trace(rho @ D @ D).real
            assert brute == pytest.approx(x + 5 * x * x, abs=1e-12)
            assert tau_pair(rho, (1, 2), "quadratic") == pytest.approx(brute, abs=1e-12)
            assert tau_pair(rho, (1, 2), "gradient") == pytest.approx(2 * x + 4 * x * x, abs=1e-12)

    def test_total_equals_pair_for_two_spins(self, rng):
        rho = random_density_matrix(4, rng)
        assert tau_total(rho, PairTopology.ring(2)) == tau_pair(rho, (1, 2))

    def test_five_spin_product_state(self, rng):
        rho = product_state(5, rng)
        assert tau_total(rho, PairTopology.ring(5)) == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("variant", ["gradient", "quadratic"])
    def test_nonnegative(self, rng, variant):
        top = PairTopology.ring(3)
        for _ in range(100):
            rho = random_density_matrix(8, rng, rank=int(rng.integers(1, 9)))
            assert tau_total(rho, top, variant) >= -1e-14

    def test_relabel_symmetric(self, rng):
        rho = random_density_matrix(8, rng)
        for v in VARIANTS:
            assert tau_pair(rho, (1, 3), v) == pytest.approx(tau_pair(rho, (3, 1), v), abs=1e-14)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_single_subsystem_unitary_invariance(self, rng, variant):
        rho = random_density_matrix(8, rng)
        for slot in range(3):
            factors = [np.eye(2)] * 3
            factors[slot] = random_unitary(2, rng)
            U = kron(*factors)
            rotated = U @ rho @ U.conj().T
            for pair in [(1, 2), (1, 3), (2, 3)]:
                assert tau_pair(rotated, pair, variant) == pytest.approx(tau_pair(rho, pair, variant), abs=1e-11)

    @pytest.mark.parametrize("variant", ["gradient", "quadratic"])
    @pytest.mark.parametrize("s", np.linspace(0.1, np.pi - 0.1, 7))
    def test_phase_scan_minimum_at_zero(self, variant, s):
        phis = np.linspace(-np.pi, np.pi, 73)
        taus = [tau_pair(np.outer(p, p.conj()), (1, 2), variant) for p in (pure_class_state(s, phi, 1.0) for phi in phis)]
        # tau has period pi in phi, so phi = +-pi ties with phi = 0
        assert taus[36] == pytest.approx(min(taus), abs=1e-13)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_gradient_tau_is_hs_norm(self, seed):
        rho = random_density_matrix(8, np.random.default_rng(seed))
        D = pair_delta(rho, (2, 3), 3)
        assert tau_pair(rho, (2, 3), "gradient", 3) == pytest.approx(np.trace(D @ D).real, abs=1e-13)
