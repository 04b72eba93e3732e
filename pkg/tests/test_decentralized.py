import numpy as np
import pytest

from proxskip.decentralized import (DecentralizedConfig, DualState,
                                    MixingMatrix, complete, custom,
                                    decentralized_lyapunov,
                                    decentralized_scaffnew_round,
                                    equivalence_check, grid, mixing_matrix,
                                    ring, run_decentralized_scaffnew,
                                    run_splitskip_consensus, splitskip_step,
                                    star)
from proxskip.linalg import matrix_sqrt_psd
from proxskip.problems import (QuadraticProblem, StackedProblem,
                               client_gradient, heterogeneous_split,
                               synthetic_quadratic)
from proxskip.prox import IndicatorZero, L1
from proxskip.solvers import reference_minimizer


def node_quadratic(n, d=3, kappa=30.0, seed=0, het=1.5):
    problem = synthetic_quadratic(d, kappa, n_samples=n, seed=seed,
                                  heterogeneity=het)
    return problem, heterogeneous_split(n, n)


class TestTopologies:
    def test_ring_edges(self):
        assert ring(4).edges == ((0, 1), (0, 3), (1, 2), (2, 3))

    def test_grid_node_count(self):
        assert grid(2, 3).n == 6

    def test_disconnected_rejected(self):
        with pytest.raises(ValueError, match="connected"):
            custom(4, [(0, 1), (2, 3)])

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError):
            custom(3, [(0, 0), (0, 1), (1, 2)])


class TestMixingMatrix:
    def test_two_node_values(self):
        mix = mixing_matrix(complete(2))
        assert np.allclose(mix.W, [[0.75, 0.25], [0.25, 0.75]], atol=1e-14)
        assert mix.delta == pytest.approx(0.5, abs=1e-12)

    def test_delta_invariant_under_relabeling(self):
        base = mixing_matrix(complete(5)).delta
        relabeled = custom(5, [(4 - i, 4 - j) for i in range(5) for j in range(i + 1, 5)])
        assert mixing_matrix(relabeled).delta == pytest.approx(base, rel=1e-12)

    def test_ring_gap_shrinks_with_size(self):
        assert mixing_matrix(ring(4)).delta > mixing_matrix(ring(8)).delta

    def test_stochasticity_and_spectrum(self):
        for top in (ring(6), star(5), grid(2, 3)):
            mix = mixing_matrix(top)
            n = mix.n
            assert np.abs(mix.W.sum(axis=0) - 1.0).max() <= 1e-12
            assert np.abs(mix.W.sum(axis=1) - 1.0).max() <= 1e-12
            assert mix.eigenvalues[0] == pytest.approx(1.0, abs=1e-12)
            assert mix.eigenvalues[-1] >= -1e-10
            assert np.abs(mix.W @ np.ones(n) - 1.0).max() <= 1e-12
            assert 0.0 < mix.delta <= 1.0

    def test_sparsity_matches_graph(self):
        top = ring(5)
        mix = mixing_matrix(top)
        for i in range(5):
            for j in range(5):
                connected = i == j or (min(i, j), max(i, j)) in top.edges
                assert (mix.W[i, j] != 0.0) == connected


class TestDecentralizedRound:
    def test_skip_changes_nothing_but_local_step(self):
        problem, split = node_quadratic(4, seed=1)
        mix = mixing_matrix(ring(4))
        x = np.ones((4, 3))
        h = np.zeros((4, 3))
        x2, h2 = decentralized_scaffnew_round(x, h, problem, split, mix.W,
                                              0.1, 2.0, 0.5, theta=0)
        for i in range(4):
            gi = client_gradient(problem, split, i, x[i])
            assert np.array_equal(x2[i], x[i] - 0.1 * gi)
        assert np.array_equal(h2, h)

    def test_average_preserved_by_communication(self, rng):
        problem, split = node_quadratic(5, seed=2)
        mix = mixing_matrix(ring(5))
        x = rng.standard_normal((5, 3))
        h = rng.standard_normal((5, 3))
        h -= h.mean(axis=0)
        gamma, p = 0.05, 0.5
        for tau_frac in (0.3, 1.0):
            tau = tau_frac * p / gamma
            x2, _ = decentralized_scaffnew_round(x, h, problem, split, mix.W,
                                                 gamma, tau, p, theta=1)
            xhat = np.stack([
                x[i] - gamma * (client_gradient(problem, split, i, x[i]) - h[i])
                for i in range(5)
            ])
            assert np.allclose(x2.mean(axis=0), xhat.mean(axis=0),
                               rtol=1e-13, atol=1e-15)

    def test_consensus_is_fixed_by_communication(self):
        problem, split = node_quadratic(4, seed=3, het=0.0)
        mix = mixing_matrix(complete(4))
        # All nodes equal and all local gradients equal: xhat stays equal,
        # so the mixing step must return it unchanged.
        x = np.tile(np.array([0.3, -1.0, 2.0]), (4, 1))
        h = np.zeros((4, 3))
        x2, h2 = decentralized_scaffnew_round(x, h, problem, split, mix.W,
                                              0.1, 5.0, 0.5, theta=1)
        xhat = x - 0.1 * np.stack([client_gradient(problem, split, i, x[i])
                                   for i in range(4)])
        assert np.allclose(x2, xhat, rtol=1e-14, atol=1e-15)
        assert np.abs(h2).max() <= 1e-13

    def test_uniform_matrix_matches_exact_averaging(self):
        # W = all-ones/n with tau = p/gamma: the gossip step is exact
        # averaging, so the trajectory tracks the federated method.
        problem, split = node_quadratic(4, seed=4)
        info = problem.smoothness_constants()
        gamma, p = 1.0 / info.L, 0.4
        W = np.full((4, 4), 0.25)
        x = np.zeros((4, 3))
        h = np.zeros((4, 3))
        from proxskip.federated import init_federated_state, scaffnew_round
        from proxskip import rng as prng
        coins = prng.coin_flips(9, p, 200)
        st = init_federated_state(problem, split, seed=9)
        dev = 0.0
        for t in range(200):
            x, h = decentralized_scaffnew_round(x, h, problem, split, W,
                                                gamma, p / gamma, p, coins[t])
            st = scaffnew_round(st, problem, split, gamma, p, int(coins[t]))
            dev = max(dev, float(np.abs(x - st.x).max()))
        assert dev <= 1e-9

    def test_extrapolation_guard(self):
        problem, split = node_quadratic(3, seed=5)
        mix = mixing_matrix(ring(3))
        with pytest.raises(ValueError):
            decentralized_scaffnew_round(np.zeros((3, 3)), np.zeros((3, 3)),
                                         problem, split, mix.W, 0.5, 10.0, 0.5, 1)


class TestDecentralizedRun:
    def test_complete_graph_converges_linearly(self):
        problem, split = node_quadratic(4, kappa=20.0, seed=6)
        info = problem.smoothness_constants()
        mix = mixing_matrix(complete(4))
        p = min(1.0, np.sqrt(1.0 / (mix.delta * info.kappa)))
        cfg = DecentralizedConfig(gamma=1.0 / info.L, p=p, T=4000, seed=7)
        rec = run_decentralized_scaffnew(problem, split, mix, cfg)
        assert rec.dist2[-1] <= 1e-12 * rec.dist2[0]
        # log-linear decay: halving the horizon loses about half the digits
        mid = rec.dist2[2000]
        assert mid <= 1e-4 * rec.dist2[0]

    def test_communication_count_near_theory(self):
        problem, split = node_quadratic(6, kappa=100.0, seed=8)
        info = problem.smoothness_constants()
        mix = mixing_matrix(ring(6))
        p = min(1.0, np.sqrt(1.0 / (mix.delta * info.kappa)))
        cfg = DecentralizedConfig(gamma=1.0 / info.L, p=p, T=60_000, seed=9)
        rec = run_decentralized_scaffnew(problem, split, mix, cfg)
        target = 1e-6 * rec.dist2[0]
        hit = np.nonzero(rec.dist2 <= target)[0]
        assert len(hit) > 0
        comms = rec.comm[hit[0]]
        ideal = np.sqrt(info.kappa / mix.delta) * np.log(1e6)
        assert comms <= 5 * ideal
        assert comms >= ideal / 25

    def test_homogeneous_nodes_track_centralized_gd(self):
        base = synthetic_quadratic(3, 15.0, n_samples=1, seed=10)
        problem = QuadraticProblem(base.A, np.tile(base.b_rows, (2, 1)))
        split = heterogeneous_split(2, 2)
        info = problem.smoothness_constants()
        mix = mixing_matrix(complete(2))
        cfg = DecentralizedConfig(gamma=1.0 / info.L, p=0.5, T=50, seed=11)
        rec = run_decentralized_scaffnew(problem, split, mix, cfg)
        x = np.zeros(3)
        for _ in range(50):
            x = x - cfg.gamma * client_gradient(problem, split, 0, x)
        mean_final = rec.final_x.mean(axis=0)
        assert np.allclose(mean_final, x, rtol=1e-12, atol=1e-14)
        assert np.all(rec.dispersion <= 1e-28)


class TestSplitSkip:
    def test_dual_step_with_zero_indicator(self, rng):
        problem, split = node_quadratic(3, seed=12)
        stacked = StackedProblem(problem, split)
        mix = mixing_matrix(ring(3))
        Lt = matrix_sqrt_psd(np.eye(3) - mix.W)
        Lfull = np.kron(Lt, np.eye(3))
        state = DualState(x=rng.standard_normal(9), y=np.zeros(9))
        gamma, tau, p = 0.05, 2.0, 0.5
        nxt = splitskip_step(state, stacked, Lfull, IndicatorZero(),
                             gamma, tau, p, theta=1)
        xhat = state.x - gamma * (stacked.gradient(state.x) + Lfull.T @ state.y)
        y_expected = state.y + tau * (Lfull @ xhat)
        assert np.allclose(nxt.y, y_expected, atol=1e-15)
        assert np.allclose(nxt.x, xhat - (gamma / p) * (Lfull.T @ (nxt.y - state.y)),
                           atol=1e-15)

    def test_skip_branch_freezes_dual(self, rng):
        problem, split = node_quadratic(3, seed=13)
        stacked = StackedProblem(problem, split)
        Lfull = np.kron(np.eye(3), np.eye(3))
        state = DualState(x=rng.standard_normal(9), y=rng.standard_normal(9))
        nxt = splitskip_step(state, stacked, Lfull, IndicatorZero(),
                             0.1, 1.0, 0.5, theta=0)
        assert np.array_equal(nxt.y, state.y)

    def test_p_one_is_papc_iteration(self, rng):
        # With p = 1 each step matches the classical primal-dual iteration
        # x+ = xhat - gamma L'(y+ - y), y+ = prox_{tau psi*}(y + tau L xhat).
        d = 4
        A = np.diag([1.0, 0.7, 0.4, 0.2])
        problem = QuadraticProblem(A, rng.standard_normal(d))
        Lmat = rng.standard_normal((3, d)) * 0.3
        psi = L1(0.5)  # conjugate prox: clip onto [-0.5, 0.5]
        gamma, tau = 0.3, 0.4
        state = DualState(x=rng.standard_normal(d), y=np.zeros(3))
        nxt = splitskip_step(state, problem, Lmat, psi, gamma, tau, 1.0, theta=1)
        xhat = state.x - gamma * (problem.gradient(state.x) + Lmat.T @ state.y)
        y_papc = np.clip(state.y + tau * (Lmat @ xhat), -0.5, 0.5)
        x_papc = xhat - gamma * (Lmat.T @ (y_papc - state.y))
        assert np.allclose(nxt.y, y_papc, atol=1e-15)
        assert np.allclose(nxt.x, x_papc, atol=1e-15)


class TestEquivalence:
    @pytest.mark.parametrize("top,seed", [
        (ring(5), 1), (complete(4), 2), (star(6), 3), (grid(2, 3), 4),
        (custom(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]), 5),
    ])
    def test_gossip_equals_split_form(self, top, seed):
        problem, split = node_quadratic(top.n, seed=seed)
        info = problem.smoothness_constants()
        cfg = DecentralizedConfig(gamma=1.0 / info.L, p=0.35, T=200, seed=seed)
        assert equivalence_check(top, problem, split, cfg, steps=200) <= 1e-9

    def test_p_one_also_agrees(self):
        problem, split = node_quadratic(5, seed=6)
        info = problem.smoothness_constants()
        cfg = DecentralizedConfig(gamma=1.0 / info.L, p=1.0, T=200, seed=6)
        assert equivalence_check(ring(5), problem, split, cfg, steps=200) <= 1e-9


class TestDualLyapunov:
    def _converged_reference(self, problem, split, mix, gamma):
        cfg = DecentralizedConfig(gamma=gamma, p=1.0, T=6000, seed=0)
        rec = run_splitskip_consensus(problem, split, mix, cfg)
        return rec.final_h.reshape(-1)  # final dual variable

    def test_zero_at_convergence(self):
        problem, split = node_quadratic(4, seed=14)
        info = problem.smoothness_constants()
        mix = mixing_matrix(ring(4))
        gamma = 1.0 / info.L
        y_star = self._converged_reference(problem, split, mix, gamma)
        cfg = DecentralizedConfig(gamma=gamma, p=1.0, T=6000, seed=0)
        rec = run_splitskip_consensus(problem, split, mix, cfg, y_star=y_star)
        x_star = reference_minimizer(problem).x_star
        phi = decentralized_lyapunov(rec.final_x, rec.final_h.reshape(-1),
                                     x_star, y_star, gamma, cfg.p, cfg.tau)
        assert phi <= 1e-18

    def test_initial_value_formula(self, rng):
        problem, split = node_quadratic(4, seed=15)
        info = problem.smoothness_constants()
        mix = mixing_matrix(ring(4))
        gamma, p = 1.0 / info.L, 0.5
        tau = p / gamma
        y_star = self._converged_reference(problem, split, mix, gamma)
        x_star = reference_minimizer(problem).x_star
        x0 = np.zeros((4, 3))
        phi0 = decentralized_lyapunov(x0, np.zeros(12), x_star, y_star,
                                      gamma, p, tau)
        expected = 4 * float(x_star @ x_star) + gamma / (p * tau) * float(y_star @ y_star)
        assert phi0 == pytest.approx(expected, rel=1e-12)

    def test_initial_bound_from_gradients(self):
        # Phi_0 / n <= ||x0 - x*||^2 + gamma/(p tau delta n) sum ||grad f_i(x*)||^2
        problem, split = node_quadratic(4, seed=16, het=2.0)
        info = problem.smoothness_constants()
        mix = mixing_matrix(ring(4))
        gamma, p = 1.0 / info.L, 0.5
        tau = p / gamma
        y_star = self._converged_reference(problem, split, mix, gamma)
        x_star = reference_minimizer(problem).x_star
        phi0 = decentralized_lyapunov(np.zeros((4, 3)), np.zeros(12), x_star,
                                      y_star, gamma, p, tau)
        grad_sq = sum(
            float(np.linalg.norm(client_gradient(problem, split, i, x_star)) ** 2)
            for i in range(4)
        )
        bound = float(x_star @ x_star) + gamma / (p * tau * mix.delta * 4) * grad_sq
        assert phi0 / 4 <= bound + 1e-9

    def test_dual_iterates_stay_in_range_of_coupling(self):
        # y_t - y* has no component along the consensus direction.
        problem, split = node_quadratic(4, seed=17)
        info = problem.smoothness_constants()
        mix = mixing_matrix(ring(4))
        gamma = 1.0 / info.L
        y_star = self._converged_reference(problem, split, mix, gamma).reshape(4, 3)
        stacked = StackedProblem(problem, split)
        Lt = matrix_sqrt_psd(np.eye(4) - mix.W)
        Lfull = np.kron(Lt, np.eye(3))
        state = DualState(x=np.zeros(12), y=np.zeros(12))
        from proxskip import rng as prng
        coins = prng.coin_flips(3, 0.4, 60)
        for t in range(60):
            state = splitskip_step(state, stacked, Lfull, IndicatorZero(),
                                   gamma, 0.4 / gamma, 0.4, coins[t])
            diff = state.y.reshape(4, 3) - y_star
            assert np.linalg.norm(diff.mean(axis=0)) * 2 <= 1e-8


class TestRateTarget:
    def test_tail_slope_at_least_third_of_theory(self):
        problem, split = node_quadratic(8, kappa=100.0, seed=18)
        info = problem.smoothness_constants()
        mix = mixing_matrix(ring(8))
        p = min(1.0, np.sqrt(1.0 / (mix.delta * info.kappa)))
        gamma = 1.0 / info.L
        tau = p / gamma
        zeta = min(gamma * info.mu, p * gamma * tau * mix.delta)
        slopes = []
        for seed in range(5):
            cfg = DecentralizedConfig(gamma=gamma, p=p, T=3000, seed=seed)
            rec = run_decentralized_scaffnew(problem, split, mix, cfg)
            logs = np.log(np.maximum(rec.dist2, 1e-300))
            lo, hi = 500, 3000
            fit = np.polyfit(np.arange(lo, hi + 1), logs[lo:hi + 1], 1)
            slopes.append(fit[0])
        observed = -float(np.median(slopes))
        assert observed >= -np.log1p(-zeta) / 3.0
