import math

import numpy as np
import pytest

from fedmob import evogame as eg
from fedmob.evogame import (EquilibriumReport, GameParams, PopulationState, Trajectory,
                            average_utility, detect_equilibrium, integrate,
                            lipschitz_probe, lyapunov_derivative, lyapunov_value,
                            region_utility, replicator_rhs)
from fedmob.verify import default_game, random_simplex


def make_params(rewards, volumes=None, unit_cost=1.0, lr=0.5):
    volumes = volumes or (100.0,) * len(rewards)
    return GameParams(rewards=rewards, data_volume=volumes,
                      unit_cost=unit_cost, learning_rate=lr)


class TestPopulationState:
    def test_simplex_enforced(self):
        with pytest.raises(ValueError):
            PopulationState((0.5, 0.6))
        with pytest.raises(ValueError):
            PopulationState((-0.1, 1.1))
        PopulationState((0.25, 0.75))

    def test_from_proportions_normalizes(self):
        x = PopulationState.from_proportions((0.3, 0.4, 0.5))
        assert abs(x.x.sum() - 1.0) < 1e-12

    def test_state_is_read_only(self):
        x = PopulationState((0.5, 0.5))
        with pytest.raises(ValueError):
            x.x[0] = 0.9


class TestRegionUtility:
    def test_single_region_share_is_one(self):
        params = make_params((650.0,), unit_cost=2.0)
        u = region_utility(PopulationState((1.0,)), 0, params, q=3.0)
        assert u == pytest.approx(650.0 - 2.0 * 3.0, abs=1e-12)

    def test_symmetric_split_gives_half_reward(self):
        params = make_params((600.0, 600.0), unit_cost=0.0)
        x = PopulationState((0.5, 0.5))
        for b in range(2):
            assert region_utility(x, b, params, q=5.0) == pytest.approx(300.0, abs=1e-12)

    def test_cost_can_push_utility_negative(self):
        params = make_params((600.0, 600.0), unit_cost=100.0)
        assert region_utility(PopulationState((0.5, 0.5)), 0, params, q=10.0) < 0

    def test_zero_mass_rejected(self):
        params = make_params((600.0, 700.0))
        x = PopulationState((0.0, 1.0))
        # zero out the weighted mass via a zero-share vertex on region 0 only
        with pytest.raises(ValueError):
            eg._field_literal(np.zeros(2), params, np.zeros(2))


class TestAverageUtility:
    def test_constant_utilities_average_to_constant(self):
        params = make_params((600.0, 600.0), unit_cost=0.0)
        x = PopulationState((0.5, 0.5))
        assert average_utility(x, params, (1.0, 1.0)) == pytest.approx(300.0, abs=1e-12)

    def test_vertex_average_is_that_region(self):
        params = make_params((600.0, 900.0), unit_cost=0.5)
        x = PopulationState((0.0, 1.0))
        assert average_utility(x, params, (2.0, 2.0)) == pytest.approx(
            region_utility(x, 1, params, 2.0), abs=1e-12)

    def test_matches_fsum_oracle(self):
        rng = np.random.default_rng(5)
        params, q = default_game(3)
        for _ in range(50):
            x = random_simplex(rng, 3)
            parts = [region_utility(x, b, params, q[b]) * x.x[b] for b in range(3)]
            assert average_utility(x, params, q) == pytest.approx(
                math.fsum(parts), abs=1e-12)


class TestReplicatorRhs:
    def test_equal_utilities_exact_zero(self):
        params = make_params((1.0, 2.0, 2.0), unit_cost=0.0)
        x = PopulationState((0.5, 0.25, 0.25))
        assert np.all(replicator_rhs(x, params, 0.0) == 0.0)

    def test_vertices_exact_zero(self):
        params, q = default_game(3)
        for b in range(3):
            v = np.zeros(3)
            v[b] = 1.0
            assert np.all(replicator_rhs(PopulationState(v), params, q) == 0.0)

    def test_two_region_closed_form(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            params = make_params(tuple(rng.uniform(600, 900, 2)),
                                 volumes=tuple(rng.uniform(50, 150, 2)),
                                 unit_cost=float(rng.uniform(0, 2)),
                                 lr=float(rng.uniform(0.1, 1.0)))
            q = rng.uniform(0, 5, 2)
            x1 = float(rng.uniform(0.05, 0.95))
            x = PopulationState((x1, 1.0 - x1))
            u1 = region_utility(x, 0, params, q[0])
            u2 = region_utility(x, 1, params, q[1])
            dx = replicator_rhs(x, params, q)
            expect = params.learning_rate * x.x[0] * x.x[1] * (u1 - u2)
            assert dx[0] == pytest.approx(expect, abs=1e-12)
            assert dx[0] + dx[1] == pytest.approx(0.0, abs=1e-12)

    def test_tangency_on_random_states(self):
        rng = np.random.default_rng(9)
        params, q = default_game(3)
        for _ in range(500):
            x = random_simplex(rng, 3)
            assert abs(float(replicator_rhs(x, params, q).sum())) < 1e-12


class TestIntegrate:
    def test_vertex_is_constant_trajectory(self):
        params, q = default_game(3)
        x0 = PopulationState((0.0, 1.0, 0.0))
        traj = integrate(x0, params, q, dt=0.01, n_steps=100)
        assert np.all(traj.states == traj.states[0])
        assert np.all(traj.derivatives == 0.0)

    def test_simplex_preserved_every_step(self):
        params, q = default_game(3)
        traj = integrate(PopulationState.from_proportions((0.18, 0.32, 0.50)),
                         params, q, dt=0.01, n_steps=5000)
        sums = traj.states.sum(axis=1)
        assert np.max(np.abs(sums - 1.0)) < 1e-9
        assert traj.states.min() >= 0.0 and traj.states.max() <= 1.0

    def test_euler_first_order_self_convergence(self):
        # errors of dt and dt/2 against a dt/16 reference: ratio near
        # (15/16)/(7/16) ~ 2.14 for a first-order method
        params, q = default_game(3)
        x0 = PopulationState.from_proportions((0.18, 0.32, 0.50))
        horizon = 5.0

        def final(dt):
            return integrate(x0, params, q, dt, int(round(horizon / dt))).states[-1]

        ref = final(0.01 / 16)
        e1 = np.abs(final(0.01) - ref).max()
        e2 = np.abs(final(0.005) - ref).max()
        assert 1.7 < e1 / e2 < 2.7

    def test_convergence_from_quoted_start(self):
        params, q = default_game(3)
        traj = integrate(PopulationState.from_proportions((0.18, 0.32, 0.50)),
                         params, q, dt=0.01, n_steps=50_000)
        report = detect_equilibrium(traj, 1e-4)
        assert report is not None and report.time < 500.0

    def test_non_finite_step_reports_index(self):
        params, q = default_game(3)
        object.__setattr__(params, "rewards", (float("inf"), 750.0, 900.0))
        with pytest.raises(ValueError, match="step"):
            integrate(PopulationState.from_proportions((0.2, 0.3, 0.5)),
                      params, q, dt=0.01, n_steps=100)

    def test_deterministic_replay(self):
        params, q = default_game(3)
        x0 = PopulationState.from_proportions((0.25, 0.35, 0.4))
        a = integrate(x0, params, q, 0.01, 2000)
        b = integrate(x0, params, q, 0.01, 2000)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.derivatives, b.derivatives)

    def test_perturbed_start_stays_within_lipschitz_envelope(self):
        params, q = default_game(3)
        x0 = np.array([0.3, 0.3, 0.4])
        eps = 1e-8
        x1 = PopulationState.from_proportions(x0 + np.array([eps, -eps, 0.0]))
        base = integrate(PopulationState(x0), params, q, 0.01, 100)
        other = integrate(x1, params, q, 0.01, 100)
        delta0 = np.abs(x1.x - x0).max()
        lip = lipschitz_probe(params, q, 200, np.random.default_rng(0))
        horizon = 1.0
        bound = 4.0 * delta0 * math.exp(3 * lip * horizon)
        assert np.abs(base.states[-1] - other.states[-1]).max() < bound


class TestDetectEquilibrium:
    def test_constant_trajectory_detects_at_zero(self):
        params, q = default_game(3)
        traj = integrate(PopulationState((0.0, 0.0, 1.0)), params, q, 0.01, 50)
        report = detect_equilibrium(traj, 1e-4)
        assert report is not None and report.time == 0.0

    def test_final_sample_above_tol_means_absent(self):
        times = np.array([0.0, 1.0])
        states = np.array([[0.5, 0.5], [0.5, 0.5]])
        derivs = np.array([[0.0, 0.0], [2e-4, -2e-4]])
        traj = Trajectory(times=times, states=states, derivatives=derivs)
        assert detect_equilibrium(traj, 1e-4) is None

    def test_quoted_proportions_reach_equilibrium(self):
        params, q = default_game(3)
        traj = integrate(PopulationState.from_proportions((0.25, 0.35, 0.4)),
                         params, q, 0.01, 50_000)
        assert detect_equilibrium(traj, 1e-4) is not None


class TestLyapunov:
    def test_uniform_state_value(self):
        for b in (2, 3, 4):
            x = PopulationState(np.full(b, 1.0 / b))
            assert lyapunov_value(x) == pytest.approx(1.0 / b, abs=1e-12)

    def test_equal_utilities_zero_derivative(self):
        params = make_params((1.0, 2.0, 2.0), unit_cost=0.0)
        x = PopulationState((0.5, 0.25, 0.25))
        assert lyapunov_derivative(x, params, 0.0) == 0.0

    def test_matches_directional_difference_along_flow(self):
        # G is quadratic, so the centred difference along dx is exact
        rng = np.random.default_rng(21)
        params, q = default_game(3)
        for _ in range(25):
            x = random_simplex(rng, 3)
            dx = replicator_rhs(x, params, q)
            h = 1e-4
            fd = (np.dot(x.x + h * dx, x.x + h * dx)
                  - np.dot(x.x - h * dx, x.x - h * dx)) / (2 * h)
            assert lyapunov_derivative(x, params, q) == pytest.approx(fd, abs=1e-6)


class TestLipschitzProbe:
    def test_zero_learning_rate_limit(self):
        # lr must be positive; the estimate scales linearly, so extrapolate to 0
        params, q = default_game(3)
        small = GameParams(rewards=params.rewards, data_volume=params.data_volume,
                           unit_cost=params.unit_cost, learning_rate=1e-12)
        est = lipschitz_probe(small, q, 100, np.random.default_rng(3))
        assert est == pytest.approx(0.0, abs=1e-9)

    def test_scales_linearly_with_learning_rate(self):
        params, q = default_game(3)
        double = GameParams(rewards=params.rewards, data_volume=params.data_volume,
                            unit_cost=params.unit_cost,
                            learning_rate=2 * params.learning_rate)
        e1 = lipschitz_probe(params, q, 200, np.random.default_rng(4))
        e2 = lipschitz_probe(double, q, 200, np.random.default_rng(4))
        assert e2 / e1 == pytest.approx(2.0, rel=1e-9)

    def test_stable_across_seeds(self):
        params, q = default_game(3)
        estimates = [lipschitz_probe(params, q, 1000, np.random.default_rng(s))
                     for s in range(4)]
        assert all(math.isfinite(e) for e in estimates)
        assert (max(estimates) - min(estimates)) / min(estimates) < 0.10


class TestTrajectoryCsv:
    def test_column_contract(self, tmp_path):
        params, q = default_game(3)
        traj = integrate(PopulationState.from_proportions((0.2, 0.3, 0.5)),
                         params, q, 0.01, 10)
        path = tmp_path / "traj.csv"
        traj.write_csv(str(path))
        header = path.read_text().splitlines()[0].split(",")
        assert header == ["t", "x_1", "x_2", "x_3", "dx_1", "dx_2", "dx_3"]
        assert len(path.read_text().splitlines()) == 12
