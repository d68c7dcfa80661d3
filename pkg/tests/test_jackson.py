"""Tests for the open-network stationary analysis.

Oracles: one free site gives lam(0) = p*alpha(-1) + q*alpha(1); the totally
asymmetric chain passes the left boundary value through; constant boundary
data gives the constant solution.  The hitting representation is checked
against the direct solves within Monte Carlo error.
"""

import math

import numpy as np
import pytest

from zrplab.environment import Environment, build_sparse_defect_environment, schedule_covering
from zrplab.disorder import uniform_law
from zrplab.errors import DomainError, WindowTooSmallError
from zrplab.harris import _run_engine, generate_events, make_equilibrium_process
from zrplab.jackson import (
    BALANCE_TOL,
    augment_source,
    barrier_construction,
    pick_delta,
    solve_traffic,
    stationary_measure,
    traffic_by_hitting,
)
from zrplab.rates import constant_rate, mean_density_R
from zrplab.stats import derive_seed

G = constant_rate()


def env_from(alphas, x_min=0, c=0.5):
    alphas = np.asarray(alphas, dtype=float)
    return Environment(
        c=c,
        x_min=x_min,
        x_max=x_min + len(alphas) - 1,
        alpha=alphas,
        generator="explicit",
    )


class TestSolveTraffic:
    def test_single_free_site_oracle(self):
        env = env_from([0.6, 0.9, 0.9], x_min=-1)
        sol = solve_traffic(env, S=[-1, 1], p=0.8)
        assert sol.lambda_at(0) == pytest.approx(0.8 * 0.6 + 0.2 * 0.9, abs=1e-14)
        assert sol.residual < BALANCE_TOL

    def test_totally_asymmetric_pass_through(self):
        env = env_from([0.7, 0.9, 0.95, 0.8], x_min=-1)
        sol = solve_traffic(env, S=[-1, 2], p=1.0)
        assert sol.lambda_at(0) == pytest.approx(0.7, abs=1e-14)
        assert sol.lambda_at(1) == pytest.approx(0.7, abs=1e-14)

    def test_constant_boundary_constant_solution(self):
        env = env_from(np.full(20, 0.9))
        sol = solve_traffic(env, S=[0, 19], p=0.7)
        assert np.allclose(sol.lam, 0.9, atol=1e-13)
        assert sol.residual < BALANCE_TOL

    def test_balance_residual_random_instances(self):
        rng = np.random.default_rng(2)
        for r in range(20):
            n = int(rng.integers(8, 40))
            env = env_from(rng.uniform(0.55, 1.0, n))
            interior = list(range(1, n - 1))
            extra = rng.choice(interior, size=max(1, n // 6), replace=False)
            S = sorted({0, n - 1, *map(int, extra)})
            sol = solve_traffic(env, S, p=float(rng.uniform(0.55, 1.0)))
            assert sol.residual < BALANCE_TOL

    def test_edges_must_be_sources(self):
        env = env_from(np.full(10, 0.9))
        with pytest.raises(WindowTooSmallError):
            solve_traffic(env, S=[0], p=0.8)

    def test_recurrence_flag(self):
        env = env_from([0.9, 0.6, 0.9], x_min=-1)
        sol = solve_traffic(env, S=[-1, 1], p=0.8)
        # lam(0) = .8*.9+.2*.9 = 0.9 >= alpha(0) = 0.6: not recurrent
        assert not sol.recurrent


class TestHittingRepresentation:
    def test_one_site_matches_solve(self):
        env = env_from([0.6, 0.9, 0.9], x_min=-1)
        est, se = traffic_by_hitting(env, [-1, 1], 0.8, 0, n_walks=40000, seed=3)
        assert abs(est - 0.66) < 4 * se

    def test_deterministic_leftward_walk(self):
        # reversed kernel of p=1 steps left surely: pays the left neighbour
        env = env_from([0.7, 0.9, 0.8], x_min=-1)
        est, se = traffic_by_hitting(env, [-1, 1], 1.0, 0, n_walks=100, seed=1)
        assert est == pytest.approx(0.7)
        assert se == 0.0
        sol = solve_traffic(env, [-1, 1], 1.0)
        assert sol.lambda_at(0) == pytest.approx(est)

    def test_constant_boundary(self):
        env = env_from(np.full(15, 0.8))
        est, se = traffic_by_hitting(env, [0, 14], 0.8, 7, n_walks=500, seed=5)
        assert est == pytest.approx(0.8)

    def test_agreement_random_instances(self):
        rng = np.random.default_rng(7)
        for r in range(20):
            n = int(rng.integers(6, 25))
            env = env_from(rng.uniform(0.55, 1.0, n))
            S = [0, n - 1]
            x = int(rng.integers(1, n - 1))
            p = float(rng.uniform(0.6, 1.0))
            sol = solve_traffic(env, S, p)
            est, se = traffic_by_hitting(env, S, p, x, n_walks=20000, seed=100 + r)
            assert abs(est - sol.lambda_at(x)) < 4 * max(se, 1e-6)


class TestAugmentation:
    def test_already_recurrent_unchanged(self):
        # boundary rate below the interior rates: constant solution 0.7
        alphas = np.full(10, 0.9)
        alphas[0] = alphas[-1] = 0.7
        env = env_from(alphas)
        sol = solve_traffic(env, [0, 9], p=0.8)
        assert sol.recurrent
        S_prime, alpha_prime = augment_source(env, [0, 9], sol)
        assert S_prime == [0, 9]
        assert np.array_equal(alpha_prime, sol.alpha)

    def test_violating_site_absorbed(self):
        env = env_from([0.9, 0.8, 0.95, 0.9], x_min=-1)
        sol = solve_traffic(env, [-1, 2], p=1.0)
        # pass-through lam = 0.9 >= alpha(0) = 0.8: site 0 joins the sources
        S_prime, alpha_prime = augment_source(env, [-1, 2], sol)
        assert S_prime == [-1, 0, 2]
        assert alpha_prime[env.index(0)] == pytest.approx(0.9)
        assert alpha_prime[env.index(0)] >= env.a(0)

    def test_resolve_strictly_recurrent(self):
        env = env_from([0.9, 0.8, 0.95, 0.9], x_min=-1)
        sol = solve_traffic(env, [-1, 2], p=1.0)
        S_prime, alpha_prime = augment_source(env, [-1, 2], sol)
        sol2 = solve_traffic(env, S_prime, p=1.0, alpha=alpha_prime)
        assert sol2.recurrent
        free = ~sol2.in_S
        assert (sol2.lam[free] < alpha_prime[free]).all()


class TestStationaryMeasure:
    def test_marginal_ratio(self):
        env = env_from([0.6, 0.9, 0.9], x_min=-1)
        sol = solve_traffic(env, [-1, 1], p=0.8)
        laws = stationary_measure(env, [-1, 1], sol, G)
        assert set(laws) == {0}
        assert laws[0].lam == pytest.approx(0.66 / 0.9)

    def test_requires_recurrence(self):
        env = env_from([0.9, 0.6, 0.9], x_min=-1)
        sol = solve_traffic(env, [-1, 1], p=0.8)
        with pytest.raises(DomainError):
            stationary_measure(env, [-1, 1], sol, G)

    def test_simulation_consistency(self):
        # evolving from the product measure keeps free-site means in place
        rng = np.random.default_rng(12)
        env = env_from(rng.uniform(0.7, 1.0, 18))
        lam = 0.35
        reps, T = 1000, 50.0
        finals = np.zeros((reps, 18))
        for r in range(reps):
            u = np.random.default_rng(derive_seed(61, r)).uniform(size=18)
            cfg, alpha = make_equilibrium_process(env, G, lam, u)
            ev = generate_events(derive_seed(62, r), (0, 17), T, 0.8)
            trajs, _ = _run_engine([cfg], [alpha], G, ev, T)
            finals[r] = trajs[0].final.counts
        means = finals[:, 1:-1].mean(axis=0)
        ses = finals[:, 1:-1].std(axis=0, ddof=1) / math.sqrt(reps)
        targets = np.array([mean_density_R(G, lam / a) for a in env.alpha[1:-1]])
        assert (np.abs(means - targets) < 4 * np.maximum(ses, 1e-9)).sum() >= 15


@pytest.fixture(scope="module")
def sparse_env():
    Q = uniform_law(0.5, 1.0)
    return build_sparse_defect_environment(
        0.5, Q, schedule_covering((-700, 700)), (-700, 700)
    )


class TestBarrier:

    def test_degenerate_all_sources(self):
        env = env_from(np.full(11, 0.59), x_min=-5, c=0.5)
        with pytest.raises(DomainError):
            barrier_construction(env, epsilon=0.1, delta=0.5, p=0.8, F=())

    def test_lambda_decreases_with_epsilon(self, sparse_env):
        lams = []
        for eps in (0.2, 0.1, 0.05):
            delta, frac = pick_delta(sparse_env, eps, p=0.8, seed=9)
            res = barrier_construction(sparse_env, eps, delta, p=0.8, F=(0,))
            lams.append(res.lambda_F[0])
            assert res.traffic_augmented.recurrent
            assert res.traffic_augmented.residual < BALANCE_TOL
        assert lams[0] > lams[1] > lams[2]
        assert lams[2] > 0.5  # still above the floor

    def test_hitting_cross_check(self, sparse_env):
        eps = 0.2
        delta, _ = pick_delta(sparse_env, eps, p=0.8, seed=9)
        res = barrier_construction(sparse_env, eps, delta, p=0.8, F=(0,))
        est, se = traffic_by_hitting(
            sparse_env, res.S_augmented, 0.8, 0, n_walks=20000, seed=4
        )
        assert abs(est - res.lambda_F[0]) < 4 * max(se, 1e-6)

    def test_window_guard(self, sparse_env):
        with pytest.raises(WindowTooSmallError):
            barrier_construction(sparse_env, 0.2, delta=1e-4, p=0.8)
