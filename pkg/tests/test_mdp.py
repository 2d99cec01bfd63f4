import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridmpc.f1 import env as f1
from hybridmpc.f1.config import RaceConfig
from hybridmpc.mdp import (BoundsViolationError, ConvergenceError, HybridAction, MdpSpec, RolloutError,
                           Trajectory, Transition, cost_to_go, discounted_return, rollout, step,
                           value_iteration_oracle)


def integrator(discount=1.0, bounds=((-1.0, 1.0),)):
    return MdpSpec(state_dim=1, continuous_bounds=bounds, discrete_count=2,
                   dynamics=lambda x, a: x + a.continuous,
                   stage_cost=lambda x, a: float(abs(x[0])), discount=discount)


def const(u, d=0):
    return lambda x: HybridAction([u], d)


def traj_from_costs(costs):
    x = np.zeros(1)
    trs = tuple(Transition(x, HybridAction([0.0], 0), x, c) for c in costs)
    return Trajectory(x, trs)


class TestHybridAction:
    def test_fields_are_copied_and_frozen(self):
        u = np.array([0.5, -0.2])
        a = HybridAction(u, 3)
        u[0] = 9.0
        assert a.continuous[0] == 0.5
        with pytest.raises(ValueError):
            a.continuous[0] = 1.0

    def test_spec_rejects_bad_discount_and_bounds(self):
        with pytest.raises(ValueError):
            integrator(discount=0.0)
        with pytest.raises(ValueError):
            integrator(discount=1.5)
        with pytest.raises(ValueError):
            integrator(bounds=((1.0, -1.0),))


class TestStep:
    def test_integrator_substitution(self):
        tr = step(integrator(), np.array([1.0]), HybridAction([-1.0], 0))
        assert tr.next_state[0] == 0.0
        assert tr.cost == 1.0

    def test_bounds_violation_names_dimension(self):
        spec = MdpSpec(state_dim=1, continuous_bounds=[[-1, 1], [0, 2]], discrete_count=1,
                       dynamics=lambda x, a: x, stage_cost=lambda x, a: 0.0)
        with pytest.raises(BoundsViolationError) as err:
            step(spec, np.zeros(1), HybridAction([0.0, 3.0], 0))
        assert err.value.dimension == 1
        with pytest.raises(BoundsViolationError):
            step(spec, np.zeros(1), HybridAction([0.0, 1.0], 1))

    def test_f1_no_stop_keeps_compound(self):
        cfg = RaceConfig()
        spec = f1.make_spec(cfg, training_starts=False)
        x = f1.initial_state(cfg)
        tr = step(spec, x, HybridAction([0.0, 5.0], 0))
        assert tr.next_state[f1.COMPOUND] == x[f1.COMPOUND]

    def test_f1_matches_duplicate_simulator(self):
        """Straight-line re-implementation of the race lap update."""
        cfg = RaceConfig()
        spec = f1.make_spec(cfg, training_starts=False)
        rng = np.random.default_rng(4)
        x = f1.initial_state(cfg)
        Eb, Ef, m, tw, tc, T = cfg.initial_battery, cfg.fuel_budget, cfg.full_mass, 0.0, 1, 0.0
        for _ in range(20):
            ub = rng.uniform(*cfg.battery_bounds)
            uf = rng.uniform(*cfg.fuel_bounds)
            ps = int(rng.integers(0, 4)) if rng.random() < 0.15 else 0
            c = cfg.compounds[tc]
            d = uf - cfg.fuel_reference
            lap = (cfg.base_lap_time + cfg.mass_sensitivity * (m - cfg.dry_mass)
                   - cfg.fuel_gain * d + cfg.fuel_curvature * d ** 2
                   + cfg.battery_gain * ub + cfg.battery_curvature * ub ** 2
                   + c.offset + c.wear_linear * tw + c.wear_quadratic * tw ** 2
                   + (cfg.pit_loss if ps else 0.0))
            grow = c.wear_rate * (1 + c.mass_coupling * (m - cfg.dry_mass) / cfg.fuel_budget)
            Eb, Ef, m, T = Eb + ub, Ef - uf, m - uf, T + lap
            tw, tc = (0.0, ps - 1) if ps else (tw + grow, tc)
            x = step(spec, x, HybridAction([ub, uf], ps)).next_state
            np.testing.assert_allclose(
                x[[f1.E_B, f1.E_F, f1.MASS, f1.WEAR, f1.COMPOUND, f1.T_RACE]],
                [Eb, Ef, m, tw, tc, T], rtol=1e-12, atol=1e-9)


class TestRollout:
    def test_length_and_chaining(self):
        traj = rollout(integrator(), const(0.3), np.array([1.0]), 5)
        assert len(traj) == 5
        assert traj.is_chained()

    def test_deterministic(self):
        a = rollout(integrator(), const(-0.2), np.array([0.7]), 6)
        b = rollout(integrator(), const(-0.2), np.array([0.7]), 6)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.costs, b.costs)

    def test_cost_matches_replay(self):
        spec = integrator()
        rng = np.random.default_rng(0)
        us = rng.uniform(-1, 1, 8)
        it = iter(us)
        traj = rollout(spec, lambda x: HybridAction([next(it)], 0), np.array([0.4]), 8)
        x, total = np.array([0.4]), 0.0
        for u in us:
            tr = step(spec, x, HybridAction([u], 0))
            total += tr.cost
            x = tr.next_state
        assert traj.costs.sum() == pytest.approx(total, abs=0)

    def test_error_carries_step_index(self):
        calls = []

        def policy(x):
            calls.append(1)
            return HybridAction([0.5 if len(calls) < 3 else 5.0], 0)
        with pytest.raises(RolloutError) as err:
            rollout(integrator(), policy, np.zeros(1), 5)
        assert err.value.step_index == 2

    def test_requires_positive_steps(self):
        with pytest.raises(ValueError):
            rollout(integrator(), const(0.0), np.zeros(1), 0)

    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=12), st.floats(-3, 3))
    @settings(max_examples=50, deadline=None)
    def test_every_rollout_is_chained(self, us, x0):
        it = iter(us)
        traj = rollout(integrator(), lambda x: HybridAction([next(it)], 0), np.array([x0]), len(us))
        assert traj.is_chained()


class TestDiscountedReturn:
    def test_geometric(self):
        assert discounted_return(traj_from_costs([1, 1, 1]), 0.5) == 1.75

    def test_undiscounted_is_sum(self):
        assert discounted_return(traj_from_costs([1.5, 2, 3]), 1.0) == 6.5

    @given(st.floats(-100, 100), st.floats(0.01, 1.0))
    def test_single_transition(self, c, g):
        assert discounted_return(traj_from_costs([c]), g) == c

    def test_rejects_bad_discount(self):
        with pytest.raises(ValueError):
            discounted_return(traj_from_costs([1]), 0.0)

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=10), st.floats(0.1, 1.0))
    def test_cost_to_go_head_is_return(self, costs, g):
        assert cost_to_go(costs, g)[0] == pytest.approx(discounted_return(traj_from_costs(costs), g), abs=1e-9)


class TestValueIteration:
    def test_single_state_geometric(self):
        spec = MdpSpec(state_dim=1, continuous_bounds=[[0, 0]], discrete_count=1,
                       dynamics=lambda x, a: x, stage_cost=lambda x, a: 1.0, discount=0.5)
        tab = value_iteration_oracle(spec, [[0.0]], [[0.0]], tol=1e-12)
        assert tab.value(np.zeros(1)) == pytest.approx(2.0, abs=1e-10)

    def test_absorbing_zero_cost(self):
        # state 1 absorbs at zero cost; state 0 costs 1 and moves to 1
        spec = MdpSpec(state_dim=1, continuous_bounds=[[0, 0]], discrete_count=1,
                       dynamics=lambda x, a: np.array([1.0]),
                       stage_cost=lambda x, a: 1.0 if x[0] < 0.5 else 0.0, discount=0.9)
        tab = value_iteration_oracle(spec, [[0.0, 1.0]], [[0.0]], tol=1e-12)
        assert tab.value(np.array([1.0])) == pytest.approx(0.0, abs=1e-12)
        assert tab.value(np.array([0.0])) == pytest.approx(1.0, abs=1e-10)

    def test_two_state_chain_against_unrolled_recursion(self):
        # costs c[s, d] and successor nxt[s, d] for a 2-state, 2-action chain
        c = np.array([[1.0, 1.3], [0.0, 0.4]])
        nxt = np.array([[0, 1], [1, 0]])
        g = 0.8
        spec = MdpSpec(state_dim=1, continuous_bounds=[[0, 0]], discrete_count=2,
                       dynamics=lambda x, a: np.array([float(nxt[int(x[0]), a.discrete])]),
                       stage_cost=lambda x, a: float(c[int(x[0]), a.discrete]), discount=g)
        tab = value_iteration_oracle(spec, [[0.0, 1.0]], [[0.0]], tol=1e-12)
        # brute force: enumerate all 2^k action sequences for a 12-step truncation, then bound the tail
        J = np.zeros(2)
        for _ in range(50):
            J = np.array([min(c[s, d] + g * J[nxt[s, d]] for d in range(2)) for s in range(2)])
        tail = g ** 50 * c.max() / (1 - g)
        for s in range(2):
            assert abs(tab.value(np.array([float(s)])) - J[s]) <= tail + 1e-9
        assert tab.residual <= 1e-12

    def test_bellman_consistency_on_grid(self):
        spec = MdpSpec(state_dim=1, continuous_bounds=[[-1, 1]], discrete_count=2,
                       dynamics=lambda x, a: np.clip(0.9 * x + (0.5 + a.discrete) * a.continuous, -2, 2),
                       stage_cost=lambda x, a: float(x[0] ** 2 + 0.1 * a.continuous[0] ** 2 + 0.2 * a.discrete),
                       discount=0.9)
        axis = np.linspace(-2, 2, 41)
        ugrid = np.linspace(-1, 1, 21)
        tol = 1e-8
        tab = value_iteration_oracle(spec, [axis], [ugrid], tol=tol)
        for x in axis:
            best = min(spec.stage_cost(np.array([x]), HybridAction([u], d))
                       + 0.9 * tab.value(spec.dynamics(np.array([x]), HybridAction([u], d)))
                       for u in ugrid for d in range(2))
            assert abs(tab.value(np.array([x])) - best) <= tol

    def test_nonconvergence_reports_residual(self):
        spec = MdpSpec(state_dim=1, continuous_bounds=[[0, 0]], discrete_count=1,
                       dynamics=lambda x, a: x, stage_cost=lambda x, a: 1.0, discount=0.99)
        with pytest.raises(ConvergenceError) as err:
            value_iteration_oracle(spec, [[0.0]], [[0.0]], tol=1e-12, max_iter=3)
        assert err.value.residual > 0

    def test_needs_discount_or_finite_mode(self):
        with pytest.raises(ValueError):
            value_iteration_oracle(integrator(discount=1.0), [[0.0]], [[0.0]])

    def test_finite_horizon_matches_brute_force(self):
        """Backward DP on a 3-step problem against full enumeration of gridded action sequences."""
        H = 3
        spec = MdpSpec(state_dim=2, continuous_bounds=[[-1, 1]], discrete_count=2,
                       dynamics=lambda x, a: np.array([x[0] + (0.5 + a.discrete) * a.continuous[0], x[1] + 1]),
                       stage_cost=lambda x, a: float(x[0] ** 2 + 0.3 * a.discrete),
                       horizon_laps=H, time_index=1)
        ugrid = [-1.0, -0.5, 0.0, 0.5, 1.0]
        # every reachable position from x0 = 1 lies on the 0.25 grid
        axis = np.arange(-6, 6.0001, 0.25)
        tab = value_iteration_oracle(spec, [axis], [ugrid], finite_horizon=True)
        import itertools
        best = np.inf
        acts = [(u, d) for u in ugrid for d in range(2)]
        for seq in itertools.product(acts, repeat=H):
            x, tot = np.array([1.0, 0.0]), 0.0
            for u, d in seq:
                a = HybridAction([u], d)
                tot += spec.stage_cost(x, a)
                x = spec.dynamics(x, a)
            best = min(best, tot)
        assert tab.value(np.array([1.0, 0.0])) == pytest.approx(best, abs=1e-12)
