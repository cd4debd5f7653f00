import warnings

import numpy as np
import pytest

from netmech import (
    EngineError,
    MonteCarloEngine,
    NegativeRewardWarning,
    QuadratureEngine,
    Scenario,
    Network,
    Uniform,
    cp_expected_utility,
    cp_expected_utility_virtual,
    demand_solve,
    export_interim_csv,
    foc_residual,
    interim_curves,
    k_matrix,
    k_sensitivity,
    reward_schedule,
    system_matrix,
    truthful_interim_utility,
)
from netmech.market import InvalidScenarioError
from conftest import CASE_PARAMS, UNIFORM, complete_network, random_valid_scenario, zero_network


def hub_network(n: int) -> Network:
    w = np.zeros((n, n))
    w[0, 1:] = 1.0
    w[1:, 0] = 1.0
    return Network(w)


class TestDemandSolve:
    def test_zero_network_closed_form(self, zero5):
        x = demand_solve(zero5, np.full(5, 0.55))
        assert np.allclose(x, 1.4 / 7.0, atol=1e-14)

    def test_complete5_symmetric_closed_form(self, complete5):
        x = demand_solve(complete5, np.full(5, 0.6))
        # phi = 0.4, so each row reads (7 - 2*0.4*4) x = 1.4
        assert np.allclose(x, 1.4 / 3.8, atol=1e-12)

    def test_hub3_hand_elimination(self, case_params, uniform_dist):
        sc = Scenario(hub_network(3), case_params, uniform_dist)
        x = demand_solve(sc, np.full(3, 0.6))
        # eliminate the two identical leaves by hand: 7 x0 - 1.6 y = 1.4,
        # 7 y - 0.8 x0 = 1.4  =>  (49 - 1.28) x0 = 9.8 + 2.24
        x0 = 12.04 / 47.72
        y = (1.4 + 0.8 * x0) / 7.0
        assert np.allclose(x, [x0, y, y], atol=1e-12)
        assert np.allclose(x, [0.25231, 0.22884, 0.22884], atol=1e-5)

    def test_invalid_scenario_refused(self, case_params):
        sc = Scenario(complete_network(5), case_params, Uniform(1.0, 2.0))
        with pytest.raises(InvalidScenarioError):
            demand_solve(sc, np.full(5, 1.5))

    def test_profile_outside_support_refused(self, complete5):
        with pytest.raises(Exception, match="support"):
            demand_solve(complete5, np.full(5, 0.9))

    def test_positive_on_random_scenarios(self, scenario_factory):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            sc = scenario_factory(rng, n=int(rng.integers(2, 13)))
            theta = sc.dist.sample(sc.n, seed=int(rng.integers(1 << 31)))
            assert np.all(demand_solve(sc, theta) > 0)

    def test_permutation_equivariance(self, hub5):
        rng = np.random.default_rng(3)
        theta = rng.uniform(0.4, 0.8, 5)
        perm = rng.permutation(5)
        sc_perm = Scenario(Network(hub5.network.weights[np.ix_(perm, perm)]), hub5.params, hub5.dist)
        x = demand_solve(hub5, theta)
        x_perm = demand_solve(sc_perm, theta[perm])
        assert np.allclose(x_perm, x[perm], atol=1e-13)

    def test_matches_explicit_inverse(self, scenario_factory):
        rng = np.random.default_rng(7)
        for n in (5, 20, 50):
            sc = scenario_factory(rng, n=n)
            theta = sc.dist.sample(n, seed=n)
            a = system_matrix(sc, theta)
            rhs = np.full(n, sc.params.s + sc.params.a - sc.params.p)
            assert np.allclose(demand_solve(sc, theta), np.linalg.inv(a) @ rhs, atol=1e-9)

    def test_symmetric_complete_scalar_formula(self, case_params):
        for n in (2, 5, 10):
            g = 0.5 * 7.0 / (0.8 * 2 * (n - 1))  # keep the dominance bound with margin 2
            sc = Scenario(Network(g * (np.ones((n, n)) - np.eye(n))), case_params, UNIFORM)
            for theta in (0.45, 0.6, 0.8):
                phi = 2 * theta - 0.8
                expected = 1.4 / (7.0 - 2 * phi * (n - 1) * g)
                x = demand_solve(sc, np.full(n, theta))
                assert np.allclose(x, expected, atol=1e-12)

    def test_entrywise_type_monotonicity(self, scenario_factory):
        rng = np.random.default_rng(21)
        h = 1e-6
        for _ in range(25):
            sc = scenario_factory(rng, n=int(rng.integers(2, 7)))
            lo, hi = sc.dist.lower, sc.dist.upper
            theta = np.clip(sc.dist.sample(sc.n, seed=int(rng.integers(1 << 31))), lo + 2 * h, hi - 2 * h)
            for i in range(sc.n):
                up, down = theta.copy(), theta.copy()
                up[i] += h
                down[i] -= h
                diff = (demand_solve(sc, up) - demand_solve(sc, down)) / (2 * h)
                assert np.min(diff) >= -1e-8


class TestFocResidual:
    def test_solution_residual_small(self, scenario_factory):
        rng = np.random.default_rng(17)
        for _ in range(20):
            sc = scenario_factory(rng)
            theta = sc.dist.sample(sc.n, seed=int(rng.integers(1 << 31)))
            assert foc_residual(sc, theta, demand_solve(sc, theta)) <= 1e-9

    def test_perturbation_detected(self, complete5):
        theta = np.full(5, 0.6)
        x = demand_solve(complete5, theta)
        x[2] += 0.01
        residual = foc_residual(complete5, theta, x)
        # the perturbed row moves by exactly (t+b) * 0.01; coupling rows move less
        assert residual == pytest.approx(7.0 * 0.01, rel=1e-12)
        assert residual > 0

    def test_zero_network_exact(self, zero5):
        assert foc_residual(zero5, np.full(5, 0.7), np.full(5, 0.2)) < 1e-15


class TestKSensitivity:
    def test_zero_network_gives_zero(self, zero5):
        assert np.array_equal(k_sensitivity(zero5, np.full(5, 0.6), 1), np.zeros((5, 5)))

    def test_two_user_finite_difference_oracle(self, case_params, uniform_dist):
        sc = Scenario(complete_network(2), case_params, uniform_dist)
        theta = np.array([0.55, 0.7])
        analytic = k_sensitivity(sc, theta, 0)
        h = 1e-5
        bump = np.array([h, 0.0])
        fd = (k_matrix(sc, theta + bump) - k_matrix(sc, theta - bump)) / (2 * h)
        scale = max(np.max(np.abs(analytic)), np.max(np.abs(fd)))
        assert np.max(np.abs(analytic - fd)) <= 1e-6 * scale

    def test_nonnegative_entries_random(self, scenario_factory):
        rng = np.random.default_rng(29)
        for _ in range(50):
            sc = scenario_factory(rng, n=int(rng.integers(2, 9)))
            theta = sc.dist.sample(sc.n, seed=int(rng.integers(1 << 31)))
            i = int(rng.integers(sc.n))
            assert k_sensitivity(sc, theta, i).min() >= -1e-12


class TestInterimCurves:
    def test_zero_network_constants(self, zero5):
        curves = interim_curves(zero5, 17, QuadratureEngine(order=8))
        assert np.allclose(curves.gamma, 0.0, atol=1e-15)
        assert np.allclose(curves.v, (0.5 - 0.1) * 0.2 - 3.0 * 0.04, atol=1e-12)
        assert np.allclose(curves.c, 0.2 - 0.02, atol=1e-12)

    def test_quadrature_vs_monte_carlo(self, case_params, uniform_dist):
        sc = Scenario(complete_network(2), case_params, uniform_dist)
        quad = interim_curves(sc, 17, QuadratureEngine(order=32))
        mc = interim_curves(sc, 17, MonteCarloEngine(samples=100_000, seed=4))
        assert np.all(np.abs(quad.gamma - mc.gamma) <= 3.0 * mc.gamma_se)

    def test_gamma_strictly_increasing_complete5(self, complete5):
        curves = interim_curves(complete5, 33, QuadratureEngine(order=8))
        assert np.all(np.diff(curves.gamma, axis=1) > 0)

    def test_grid_size_minimum(self, complete5):
        with pytest.raises(ValueError, match="grid_size"):
            interim_curves(complete5, 8, QuadratureEngine())

    def test_quadrature_size_limit(self, case_params, uniform_dist):
        g = 0.05 * (np.ones((9, 9)) - np.eye(9))
        sc = Scenario(Network(g), case_params, uniform_dist)
        with pytest.raises(EngineError, match="Monte"):
            interim_curves(sc, 9, QuadratureEngine(order=8))

    def test_zero_budget_engines(self):
        with pytest.raises(EngineError):
            QuadratureEngine(order=0)
        with pytest.raises(EngineError):
            MonteCarloEngine(samples=0)

    def test_threading_is_bit_identical(self, complete5):
        eng = QuadratureEngine(order=8)
        one = interim_curves(complete5, 33, eng, threads=1)
        four = interim_curves(complete5, 33, eng, threads=4)
        assert np.array_equal(one.gamma, four.gamma)
        assert np.array_equal(one.v, four.v)
        assert np.array_equal(one.c, four.c)

    def test_user_subset(self, complete5):
        curves = interim_curves(complete5, 17, QuadratureEngine(order=4), users=[2])
        assert curves.users == (2,)
        assert np.all(np.isfinite(curves.gamma[2]))
        assert np.all(np.isnan(curves.gamma[0]))


class TestRewardSchedule:
    def test_zero_network_constant_reward(self, zero5):
        curves = interim_curves(zero5, 17, QuadratureEngine(order=8))
        schedule = reward_schedule(curves)
        assert np.allclose(schedule.rewards, 0.04, atol=1e-12)

    def test_lower_endpoint_formula(self, complete5):
        curves = interim_curves(complete5, 17, QuadratureEngine(order=8))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NegativeRewardWarning)
            schedule = reward_schedule(curves)
        lo = curves.grid[0]
        expected = -lo * curves.gamma[:, 0] - curves.v[:, 0]
        assert np.allclose(schedule.rewards[:, 0], expected, atol=1e-15)

    def test_negative_rewards_warn_not_clip(self, complete5):
        curves = interim_curves(complete5, 17, QuadratureEngine(order=8))
        with pytest.warns(NegativeRewardWarning, match="user"):
            schedule = reward_schedule(curves)
        assert schedule.rewards.min() < 0  # kept as-is

    def test_truthful_utility_grid_refinement(self, complete5):
        eng = QuadratureEngine(order=8)
        coarse = interim_curves(complete5, 64, eng, users=[0])
        fine = interim_curves(complete5, 631, eng, users=[0])  # 10x finer, shared nodes
        t_coarse = truthful_interim_utility(coarse)[0]
        t_fine = truthful_interim_utility(fine)[0][::10]
        assert np.all(np.diff(t_coarse) >= 0)
        assert np.max(np.abs(t_coarse - t_fine)) < 1e-4

    def test_unsorted_grid_rejected(self, zero5):
        curves = interim_curves(zero5, 17, QuadratureEngine(order=4))
        broken = type(curves)(
            grid=curves.grid[::-1].copy(),
            gamma=curves.gamma,
            v=curves.v,
            c=curves.c,
            users=curves.users,
            method=curves.method,
            detail=curves.detail,
        )
        with pytest.raises(ValueError, match="ascending"):
            reward_schedule(broken)


class TestCpExpectedUtility:
    def test_single_user_zero_network(self, case_params, uniform_dist):
        sc = Scenario(zero_network(1), case_params, uniform_dist)
        curves = interim_curves(sc, 17, QuadratureEngine(order=8))
        schedule = reward_schedule(curves)
        assert cp_expected_utility(sc, curves, schedule) == pytest.approx(0.14, abs=1e-10)

    def test_dual_formula_crosscheck(self, case_params, uniform_dist):
        sc = Scenario(complete_network(2), case_params, uniform_dist)
        curves = interim_curves(sc, 401, QuadratureEngine(order=12))
        schedule = reward_schedule(curves)
        direct = cp_expected_utility(sc, curves, schedule)
        virtual = cp_expected_utility_virtual(sc, curves)
        assert abs(direct - virtual) / abs(direct) <= 1e-6

    def test_positive_and_stable_under_refinement(self, complete5):
        eng = QuadratureEngine(order=8)
        values = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NegativeRewardWarning)
            for grid in (64, 128):
                curves = interim_curves(complete5, grid, eng)
                values.append(cp_expected_utility(complete5, curves, reward_schedule(curves)))
        assert values[0] > 0
        assert abs(values[0] - values[1]) <= 1e-3


class TestBindingCondition:
    def test_truthful_utility_zero_at_lowest_type(self, complete5, hub5):
        for sc in (complete5, hub5):
            curves = interim_curves(sc, 17, QuadratureEngine(order=8))
            assert np.all(truthful_interim_utility(curves)[:, 0] == 0.0)


class TestCsvExport:
    def test_columns_and_precision(self, zero5, tmp_path):
        curves = interim_curves(zero5, 17, QuadratureEngine(order=4))
        schedule = reward_schedule(curves)
        path = tmp_path / "curves.csv"
        export_interim_csv(curves, schedule, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "user,theta,gamma,V,C,r"
        assert len(lines) == 1 + 5 * 17
        first = lines[1].split(",")
        assert float(first[5]) == pytest.approx(0.04, abs=1e-12)
