import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wsn_estimation.errors import SingularBlock
from wsn_estimation.filter import (FilterParams, NodeState, ProposedEstimator, covariance_reinit,
                                   covariance_update, init_state, initial_variance, masked_pseudoinverse,
                                   optimal_weights, solve_lambda, update_estimate, weights_for_lambda)
from wsn_estimation.thresholds import fixed_point_solve
from wsn_estimation.topology import build_geometric, theta_sets


def random_spd(rng, n, scale=1.0):
    a = rng.normal(size=(n, n))
    return scale * (a @ a.T / n + 0.1 * np.eye(n))


def svd_oracle(m, support):
    phi = np.zeros(m.shape[0])
    phi[list(support)] = 1.0
    return np.linalg.pinv(m * np.outer(phi, phi), rcond=1e-13)


def state_with(gamma_hat, active):
    gamma_hat = np.array(gamma_hat, float)
    n = gamma_hat.shape[0]
    return NodeState(id=0, x=0.0, k=np.zeros(n), h=np.zeros(n), gamma_hat=gamma_hat,
                     active_set=np.array(active), neighborhood=np.arange(n))


class TestPseudoinverse:
    def test_identity(self):
        np.testing.assert_allclose(masked_pseudoinverse(np.eye(3), [0, 1, 2]), np.eye(3), atol=1e-11)

    def test_one_by_one_block(self):
        out = masked_pseudoinverse(np.diag([2.0, 4.0]), [0])
        np.testing.assert_allclose(out, [[0.5, 0], [0, 0]], atol=1e-12)

    def test_against_svd(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            m = random_spd(rng, 5)
            support = np.flatnonzero(rng.random(5) < 0.6)
            if support.size == 0:
                support = np.array([2])
            np.testing.assert_allclose(masked_pseudoinverse(m, support), svd_oracle(m, support), atol=1e-10)

    def test_singular_block(self):
        with pytest.raises(SingularBlock):
            masked_pseudoinverse(np.ones((2, 2)), [0, 1])

    def test_empty_support(self):
        with pytest.raises(ValueError):
            masked_pseudoinverse(np.eye(2), [])


class TestWeights:
    def test_scalar_equal_variance(self):
        k, h = weights_for_lambda(np.array([[1.5]]), [0], 1.5, 0.0)
        assert k[0] == pytest.approx(0.5) and h[0] == pytest.approx(0.5)

    @pytest.mark.parametrize("p", [0.1, 1.0, 7.0])
    def test_scalar_formula(self, p):
        s2 = 1.5
        k, h = weights_for_lambda(np.array([[p]]), [0], s2, 0.0)
        assert k[0] == pytest.approx(s2 / (p + s2), rel=1e-9)
        assert h[0] == pytest.approx(p / (p + s2), rel=1e-9)

    def test_large_lambda_is_measurement_average(self):
        g = random_spd(np.random.default_rng(1), 4)
        k, h = weights_for_lambda(g, [0, 1, 3], 1.5, 1e12)
        assert np.abs(k).max() < 1e-10
        np.testing.assert_allclose(h, [1 / 3, 1 / 3, 0, 1 / 3], atol=1e-10)

    def test_zero_off_support_and_normalized(self):
        g = random_spd(np.random.default_rng(2), 6)
        k, h = weights_for_lambda(g, [1, 4, 5], 1.5, 0.3)
        assert k[[0, 2, 3]].tolist() == [0, 0, 0] and h[[0, 2, 3]].tolist() == [0, 0, 0]
        assert abs((k + h).sum() - 1) < 1e-12

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            weights_for_lambda(np.eye(2), [0], 1.0, -1.0)

    def test_closed_form_is_constrained_optimum(self):
        # brute force: minimize k'Gk + s2 h'h with sum(k+h) = 1 using a generic solver of the KKT system
        rng = np.random.default_rng(3)
        g = random_spd(rng, 3)
        s2 = 0.8
        kkt = np.zeros((7, 7))
        kkt[:3, :3] = 2 * g
        kkt[3:6, 3:6] = 2 * s2 * np.eye(3)
        kkt[6, :6] = kkt[:6, 6] = 1.0
        rhs = np.zeros(7)
        rhs[6] = 1.0
        sol = np.linalg.solve(kkt, rhs)
        k, h = weights_for_lambda(g, [0, 1, 2], s2, 0.0)
        np.testing.assert_allclose(np.r_[k, h], sol[:6], atol=1e-9)


class TestSolveLambda:
    def test_inactive(self):
        g = np.diag([5.0, 5.0])
        k, _ = weights_for_lambda(g, [0, 1], 1.0, 0.0)
        assert solve_lambda(g, [0, 1], 1.0, float(k @ k) + 0.01) == 0.0

    @pytest.mark.parametrize("gamma", [0.01, 0.5, 3.0])
    def test_scalar(self, gamma):
        lam = solve_lambda(np.array([[gamma]]), [0], 1.5, 0.04)
        k, h = weights_for_lambda(np.array([[gamma]]), [0], 1.5, lam)
        assert k[0] == pytest.approx(0.2, abs=1e-8)
        assert h[0] == pytest.approx(0.8, abs=1e-8)

    def test_against_grid_scan(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            g = random_spd(rng, 4, scale=0.2)
            psi = 0.05
            lam = solve_lambda(g, range(4), 1.5, psi)
            k, _ = weights_for_lambda(g, range(4), 1.5, lam)
            assert psi - 1e-8 <= k @ k <= psi + 1e-8
            grid = np.linspace(0, 2 * lam + 1, 4001)
            norms = np.array([np.sum(weights_for_lambda(g, range(4), 1.5, x)[0] ** 2) for x in grid])
            crossing = grid[np.argmax(norms <= psi)]
            assert abs(crossing - lam) <= grid[1] - grid[0]

    def test_norm_monotone_in_lambda(self):
        g = random_spd(np.random.default_rng(5), 5)
        norms = [np.sum(weights_for_lambda(g, range(5), 1.0, x)[0] ** 2) for x in np.linspace(0, 20, 200)]
        assert np.all(np.diff(norms) <= 1e-15)

    def test_lambda_in_bracket(self):
        g = random_spd(np.random.default_rng(6), 3, scale=0.1)
        psi = 0.02
        lam = solve_lambda(g, range(3), 1.5, psi)
        upper = max(0.0, 1.5 / np.sqrt(3 * psi) - np.linalg.eigvalsh(g).min())
        assert 0 < lam <= upper + 1e-9

    def test_rejects_nonpositive_psi(self):
        with pytest.raises(ValueError):
            solve_lambda(np.eye(2), [0], 1.0, 0.0)

    def test_optimal_weights(self):
        params = FilterParams(sigma2=1.5, psi_i=0.04)
        k, h, lam = optimal_weights(np.array([[0.3]]), [0], params)
        assert lam > 0 and k[0] == pytest.approx(0.2, abs=1e-8)


class TestUpdate:
    def test_mean_of_measurements(self):
        assert update_estimate(None, [9, 9, 9], [1, 2, 6], np.zeros(3), np.full(3, 1 / 3)) == pytest.approx(3.0)

    def test_hold(self):
        assert update_estimate(None, [4.5, 1.0], [0, 0], [1, 0], [0, 0]) == 4.5

    def test_arithmetic(self):
        assert update_estimate(None, [1, 2], [3, 5], [0.3, 0.2], [0.1, 0.4]) == pytest.approx(3.0)

    def test_rejects_weight_off_active_set(self):
        state = state_with(np.eye(2), [0])
        with pytest.raises(ValueError):
            update_estimate(state, [1, 2], [3, 4], [0.5, 0.5], [0, 0])


class TestInit:
    @pytest.mark.parametrize("u", [0.0, 2.7])
    def test_estimate_is_measurement(self, u):
        state = init_state(u)
        assert state.x == u and state.lam == 0.0

    def test_diagonal(self):
        state = init_state(1.0, node=1, n=4, neighborhood=[0, 1, 2], sigma2=1.5)
        np.testing.assert_allclose(np.diag(state.gamma_hat)[[0, 1, 2]], 1.5 * (1 + 1 / 2))
        assert state.gamma_hat[3, 3] == 0
        assert initial_variance(1.5, 1) == 1.5


class TestCovariance:
    def test_no_forgetting_keeps_matrix(self):
        s = state_with([[1.0, 0.2], [0.2, 2.0]], [0, 1])
        np.testing.assert_array_equal(covariance_update(s, [3.0, -1.0], 1.0), s.gamma_hat)

    def test_full_forgetting(self):
        s = state_with(np.eye(3), [0, 2])
        out = covariance_update(s, [2.0, 9.0, -1.0], 0.0)
        np.testing.assert_allclose(out[np.ix_([0, 2], [0, 2])], [[4, -2], [-2, 1]])
        assert out[1, 1] == 1.0

    def test_arithmetic(self):
        s = state_with(np.eye(2), [0, 1])
        np.testing.assert_allclose(np.diag(covariance_update(s, [1.0, 1.0], 0.9)), [1.0, 1.0])

    def test_noise_correction_subtracts(self):
        s = state_with(np.zeros((2, 2)), [0, 1])
        out = covariance_update(s, [1.0, 1.0], 0.0, noise_var=0.25)
        np.testing.assert_allclose(out, np.full((2, 2), 0.75))

    def test_reinit_example(self):
        s = state_with([[2, 0.5], [0.5, 1]], [0])
        np.testing.assert_array_equal(covariance_reinit(s, 1), [[2, 0], [0, 2]])

    def test_reinit_equal_diagonal(self):
        s = state_with(np.array([[3, 1, 1], [1, 3, 1], [1, 1, 3]], float), [0, 1])
        assert covariance_reinit(s, 2)[2, 2] == 3

    def test_reinit_single(self):
        s = state_with([[1.7]], [0])
        np.testing.assert_array_equal(covariance_reinit(s, 0), [[1.7]])


def network(seed=0, n=12, gamma=0.9):
    topo = build_geometric(n, seed=seed)
    psi = fixed_point_solve(theta_sets(topo), gamma ** 2).psi
    return topo, psi


class TestNetwork:
    def run(self, seed, steps=60, q=0.2, sigma2=1.5, gamma=0.9):
        topo, psi = network(seed, gamma=gamma)
        rng = np.random.default_rng(seed)
        est = ProposedEstimator(topo.adjacency, psi, sigma2)
        n = topo.n
        d = np.sin(np.arange(steps) / 10)
        x = est.start(d[0] + rng.normal(0, np.sqrt(sigma2), n), topo.adjacency)
        for t in range(1, steps):
            phi = topo.adjacency & ((rng.random((n, n)) > q) | np.eye(n, dtype=bool))
            u = d[t] + rng.normal(0, np.sqrt(sigma2), n)
            x_new = est.step(x, u, phi)
            yield est, phi, x, u, x_new
            x = x_new

    def test_step_invariants(self):
        for seed in range(3):
            for est, phi, x, u, x_new in self.run(seed):
                phi = phi & est.adjacency
                assert np.all(est.K[~phi] == 0) and np.all(est.H[~phi] == 0)
                np.testing.assert_allclose((est.K + est.H).sum(axis=1), 1.0, atol=1e-9)
                assert np.all((est.K ** 2).sum(axis=1) <= est.psi + 1e-9)
                assert np.linalg.norm(est.K, 2) <= 0.9 + 1e-9
                active = est.lam > 0
                np.testing.assert_allclose((est.K[active] ** 2).sum(axis=1), est.psi[active], atol=1e-9)
                np.testing.assert_allclose(x_new, est.K @ x + est.H @ u)

    def test_covariance_symmetric(self):
        for est, *_ in self.run(1, steps=30):
            g = est.gamma_hat
            np.testing.assert_allclose(g, np.transpose(g, (0, 2, 1)), atol=1e-12)

    def test_node_state_snapshot(self):
        for est, phi, *_ in self.run(2, steps=5):
            pass
        s = est.node_state(3)
        np.testing.assert_array_equal(s.active_set, np.flatnonzero(phi[3] & est.adjacency[3]))
        assert s.k.sum() + s.h.sum() == pytest.approx(1.0)

    def test_matches_per_node_solver_without_correction(self):
        topo, psi = network(4)
        est = ProposedEstimator(topo.adjacency, psi, 1.5, noise_correction=False)
        rng = np.random.default_rng(0)
        x = est.start(rng.normal(size=topo.n), topo.adjacency)
        for _ in range(5):
            x = est.step(x, rng.normal(size=topo.n), topo.adjacency)
        for i in range(topo.n):
            s = est.node_state(i)
            k, h, lam = optimal_weights(s.gamma_hat, s.active_set, FilterParams(1.5, psi[i]))
            np.testing.assert_allclose(est.K[i], k, atol=1e-7)
            np.testing.assert_allclose(est.H[i], h, atol=1e-7)

    def test_constant_signal_noise_free(self):
        topo, psi = network(5)
        est = ProposedEstimator(topo.adjacency, psi, 0.0, noise_correction=False)
        x = est.start(np.full(topo.n, 2.0), topo.adjacency)
        for _ in range(10):
            x = est.step(x, np.full(topo.n, 2.0), topo.adjacency)
        np.testing.assert_allclose(x, 2.0, atol=1e-12)


class TestProperties:
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(0.1, 5.0), st.floats(0.001, 0.99))
    @settings(max_examples=150, deadline=None)
    def test_variance_dominance(self, m, seed, sigma2, psi):
        rng = np.random.default_rng(seed)
        gamma = random_spd(rng, m)
        k, h, _ = optimal_weights(gamma, range(m), FilterParams(sigma2, psi))
        variance = k @ gamma @ k + sigma2 * h @ h
        assert variance < sigma2 / m

    @given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(0.001, 0.99))
    @settings(max_examples=150, deadline=None)
    def test_solve_invariants(self, m, seed, psi):
        rng = np.random.default_rng(seed)
        gamma = random_spd(rng, m, scale=rng.uniform(0.01, 3))
        k, h, lam = optimal_weights(gamma, range(m), FilterParams(1.5, psi))
        assert abs((k + h).sum() - 1) < 1e-9
        assert k @ k <= psi + 1e-9
        if lam > 0:
            assert abs(k @ k - psi) < 1e-9
        assert lam >= 0
